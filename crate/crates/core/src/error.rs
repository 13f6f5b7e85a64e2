use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error in {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no clips found in {0}")]
    NoClips(PathBuf),

    #[error("mixed resolutions within clip: {path} is {found:?}, expected {expected:?}")]
    MixedResolution {
        path: PathBuf,
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error(
        "geometry mismatch in field `{field}`: checkpoint has {found}, run expects {expected}"
    )]
    GeometryMismatch {
        field: &'static str,
        expected: String,
        found: String,
    },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint checksum mismatch: {0}")]
    Checksum(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid request: {0}")]
    Request(String),

    #[error("metric error: {0}")]
    Metric(String),
}

impl Error {
    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }
}
