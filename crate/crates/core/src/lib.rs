//! Video prediction with a neural process over autoencoder features.
//!
//! Frames are compressed by a convolutional autoencoder into a small grid of
//! feature vectors. A transformer conditioned on the features and coordinates
//! of any subset of context frames predicts the features at arbitrary query
//! times, which are decoded back into frames.

pub mod autoencoder;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod coords;
pub mod datagen;
pub mod error;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod predictor;
pub mod training;

pub use error::{Error, Result};
