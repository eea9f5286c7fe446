use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor error: {0}")]
    Candle(#[from] candle_core::Error),
    #[error(transparent)]
    Core(#[from] handmotion_core::Error),
    #[error("feature width mismatch: model expects {expected}, got {got}")]
    FeatureWidthMismatch { expected: usize, got: usize },
    #[error("text has no tokens")]
    EmptyText,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("bad schedule parameters: {0}")]
    BadScheduleParams(String),
    #[error("sequence length {len} exceeds maximum {max}")]
    LengthExceedsMax { len: usize, max: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint error in {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn checkpoint(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Checkpoint {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
