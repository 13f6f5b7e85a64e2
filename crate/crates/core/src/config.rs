//! Model geometry and training hyperparameters.

use serde::{Deserialize, Serialize};

use crate::datagen::SplitSpec;
use crate::error::{Error, Result};

/// Network geometry. Everything a checkpoint needs to rebuild the graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Square frame side `I_h = I_w`.
    pub image_size: usize,
    /// Color channels `I_c`.
    pub channels: usize,
    pub down_blocks: usize,
    pub res_blocks: usize,
    /// Feature width `D`.
    pub feature_dim: usize,
    /// Encoder widths per downsampling block; the last one must equal `feature_dim`.
    /// Defaults to doubling per block.
    #[serde(default)]
    pub ae_widths: Option<Vec<usize>>,
    /// Number of frames in the training window; raw time `L - 1` maps to 1.
    pub window_len: usize,
    /// Number of random Fourier features `m`.
    pub fourier_features: usize,
    /// Standard deviation of the Gaussian projection matrix.
    pub fourier_scale: f64,
    /// When false, raw normalized coordinates go through a single linear map.
    pub use_inr: bool,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub heads: usize,
    /// Hidden width of transformer feed-forward sublayers, as a multiple of `D`.
    pub ffn_mult: usize,
}

impl ModelConfig {
    /// Desk-scale geometry: 32x32 grayscale frames, 4x4x64 features.
    pub fn toy() -> Self {
        Self {
            image_size: 32,
            channels: 1,
            down_blocks: 3,
            res_blocks: 2,
            feature_dim: 64,
            ae_widths: None,
            window_len: 20,
            fourier_features: 128,
            fourier_scale: 3.0,
            use_inr: true,
            encoder_blocks: 2,
            decoder_blocks: 2,
            heads: 4,
            ffn_mult: 2,
        }
    }

    /// Full-size geometry for 64x64 inputs (8x8x512 features).
    pub fn full_64() -> Self {
        Self {
            image_size: 64,
            channels: 1,
            down_blocks: 3,
            res_blocks: 2,
            feature_dim: 512,
            ae_widths: None,
            window_len: 20,
            fourier_features: 128,
            fourier_scale: 10.0,
            use_inr: true,
            encoder_blocks: 4,
            decoder_blocks: 8,
            heads: 8,
            ffn_mult: 4,
        }
    }

    /// Full-size geometry for 128x128 inputs.
    pub fn full_128() -> Self {
        Self {
            image_size: 128,
            channels: 3,
            down_blocks: 4,
            res_blocks: 3,
            ..Self::full_64()
        }
    }

    /// Side of the square feature grid (`H = W`).
    pub fn grid(&self) -> usize {
        self.image_size >> self.down_blocks
    }

    pub fn tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn widths(&self) -> Vec<usize> {
        match &self.ae_widths {
            Some(w) => w.clone(),
            None => (0..self.down_blocks)
                .map(|i| (self.feature_dim >> (self.down_blocks - 1 - i)).max(8))
                .map(|w| w.min(self.feature_dim))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.feature_dim == 0 {
            return bad("channels and feature_dim must be positive".into());
        }
        if self.down_blocks == 0 {
            return bad("down_blocks must be at least 1".into());
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(1 << self.down_blocks) {
            return bad(format!(
                "image_size {} is not divisible by 2^{}",
                self.image_size, self.down_blocks
            ));
        }
        let widths = self.widths();
        if widths.len() != self.down_blocks {
            return bad(format!(
                "ae_widths has {} entries, expected {}",
                widths.len(),
                self.down_blocks
            ));
        }
        if widths.last() != Some(&self.feature_dim) {
            return bad("last ae width must equal feature_dim".into());
        }
        if self.window_len < 2 {
            return bad("window_len must be at least 2".into());
        }
        if self.heads == 0 || !self.feature_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "feature_dim {} is not divisible by heads {}",
                self.feature_dim, self.heads
            ));
        }
        if self.use_inr && self.fourier_features == 0 {
            return bad("fourier_features must be positive".into());
        }
        if self.ffn_mult == 0 {
            return bad("ffn_mult must be positive".into());
        }
        Ok(())
    }

    /// Compare only the fields that shape the autoencoder.
    pub fn check_autoencoder_compatible(&self, found: &ModelConfig) -> Result<()> {
        let ae_only = |c: &ModelConfig| ModelConfig {
            image_size: c.image_size,
            channels: c.channels,
            down_blocks: c.down_blocks,
            res_blocks: c.res_blocks,
            feature_dim: c.feature_dim,
            ae_widths: Some(c.widths()),
            ..ModelConfig::toy()
        };
        ae_only(self).check_compatible(&ae_only(found))
    }

    /// Compare the geometry-bearing fields against `other`, naming the first mismatch.
    pub fn check_compatible(&self, found: &ModelConfig) -> Result<()> {
        macro_rules! cmp {
            ($($f:ident),*) => {$(
                if self.$f != found.$f {
                    return Err(Error::GeometryMismatch {
                        field: stringify!($f),
                        expected: format!("{:?}", self.$f),
                        found: format!("{:?}", found.$f),
                    });
                }
            )*};
        }
        cmp!(
            image_size,
            channels,
            down_blocks,
            res_blocks,
            feature_dim,
            window_len,
            fourier_features,
            use_inr,
            encoder_blocks,
            decoder_blocks,
            heads,
            ffn_mult
        );
        if self.widths() != found.widths() {
            return Err(Error::GeometryMismatch {
                field: "ae_widths",
                expected: format!("{:?}", self.widths()),
                found: format!("{:?}", found.widths()),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Autoencoder,
    Predictor,
}

/// Final phase of predictor training. `Stochastic` runs a deterministic
/// warm-up for `deterministic_fraction` of the steps first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Deterministic,
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub phase: Phase,
    pub epochs: usize,
    /// Hard cap on optimizer steps; overrides `epochs` when set.
    #[serde(default)]
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    /// Frames per autoencoder step.
    #[serde(default = "default_ae_batch")]
    pub ae_batch_size: usize,
    /// Autoencoder learning rate (Adam, constant).
    pub ae_lr: f64,
    pub lr_max: f64,
    pub lr_min: f64,
    /// Cosine restart period, in epochs.
    pub restart_period: usize,
    pub clip_norm: f64,
    pub gamma: f64,
    pub beta: f64,
    pub weight_decay: f64,
    pub deterministic_fraction: f64,
    pub seed: u64,
    pub split_policy: SplitSpec,
    /// Clip length `L` drawn from each video.
    pub clip_len: usize,
    pub augment_flips: bool,
}

fn default_ae_batch() -> usize {
    16
}

impl TrainConfig {
    /// Hyperparameters for full-size runs.
    pub fn full(stage: Stage) -> Self {
        Self {
            stage,
            phase: Phase::Stochastic,
            epochs: 300,
            max_steps: None,
            batch_size: 8,
            ae_batch_size: 16,
            ae_lr: 1e-4,
            lr_max: 1e-4,
            lr_min: 1e-7,
            restart_period: 150,
            clip_norm: 1.0,
            gamma: 0.01,
            beta: 1e-6,
            weight_decay: 1e-4,
            deterministic_fraction: 1.0 / 3.0,
            seed: 0,
            split_policy: SplitSpec::Vrc {
                min_context: 4,
                max_context: 16,
            },
            clip_len: 20,
            augment_flips: false,
        }
    }

    /// Desk-scale defaults: larger step sizes so short runs make progress.
    pub fn toy(stage: Stage) -> Self {
        Self {
            epochs: 60,
            batch_size: 4,
            ae_lr: 2e-3,
            lr_max: 5e-4,
            lr_min: 1e-6,
            restart_period: 60,
            ..Self::full(stage)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.ae_batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.epochs == 0 && self.max_steps.is_none() {
            return bad("epochs must be positive".into());
        }
        if !(self.lr_min < self.lr_max) || self.lr_min < 0.0 {
            return bad(format!(
                "need 0 <= lr_min < lr_max, got {} and {}",
                self.lr_min, self.lr_max
            ));
        }
        if self.ae_lr <= 0.0 {
            return bad("ae_lr must be positive".into());
        }
        if self.restart_period == 0 {
            return bad("restart_period must be at least 1".into());
        }
        if self.clip_norm <= 0.0 {
            return bad("clip_norm must be positive".into());
        }
        if self.gamma < 0.0 || self.beta < 0.0 || self.weight_decay < 0.0 {
            return bad("gamma, beta and weight_decay must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.deterministic_fraction) {
            return bad("deterministic_fraction must lie in [0, 1]".into());
        }
        if self.clip_len < 2 {
            return bad("clip_len must be at least 2".into());
        }
        self.split_policy.validate(self.clip_len)?;
        Ok(())
    }

    /// KL weight in effect for a phase; zero while deterministic.
    pub fn effective_beta(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Deterministic => 0.0,
            Phase::Stochastic => self.beta,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for m in [
            ModelConfig::toy(),
            ModelConfig::full_64(),
            ModelConfig::full_128(),
        ] {
            m.validate().unwrap();
            assert_eq!(m.widths().last(), Some(&m.feature_dim));
        }
        assert_eq!(ModelConfig::full_64().grid(), 8);
        assert_eq!(ModelConfig::full_128().grid(), 8);
        TrainConfig::full(Stage::Predictor).validate().unwrap();
        TrainConfig::toy(Stage::Predictor).validate().unwrap();
    }

    #[test]
    fn full_scale_hyperparameters() {
        let c = TrainConfig::full(Stage::Predictor);
        assert_eq!(c.lr_max, 1e-4);
        assert_eq!(c.lr_min, 1e-7);
        assert_eq!(c.restart_period, 150);
        assert_eq!(c.gamma, 0.01);
        assert_eq!(c.beta, 1e-6);
        assert_eq!(c.ae_lr, 1e-4);
        assert_eq!(c.effective_beta(Phase::Deterministic), 0.0);
    }

    #[test]
    fn rejects_bad_lr_order() {
        let mut c = TrainConfig::toy(Stage::Predictor);
        c.lr_min = c.lr_max;
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v = serde_json::to_value(ModelConfig::toy()).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(serde_json::from_value::<ModelConfig>(v).is_err());
    }

    #[test]
    fn compatibility_names_field() {
        let err = ModelConfig::full_128()
            .check_compatible(&ModelConfig::full_64())
            .unwrap_err();
        assert!(err.to_string().contains("image_size"), "{err}");
    }
}
