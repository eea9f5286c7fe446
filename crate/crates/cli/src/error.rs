use std::path::PathBuf;

use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {cause}")]
    Stage { stage: String, cause: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing checkpoint {0}")]
    MissingCheckpoint(PathBuf),
    #[error("frame index {index} out of range for a {frames}-frame motion")]
    BadFrameIndex { index: usize, frames: usize },
    #[error(transparent)]
    Core(#[from] handmotion_core::Error),
    #[error(transparent)]
    Models(#[from] handmotion_models::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn stage(stage: &str, cause: impl std::fmt::Display) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            cause: cause.to_string(),
        }
    }

    /// Wraps anything that is not already a config or I/O error as a
    /// failure of `stage`.
    pub fn in_stage(self, stage: &str) -> Self {
        match self.kind() {
            "stage" | "config" | "io" => self,
            _ => Error::stage(stage, self),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Core(handmotion_core::Error::Io { .. }) | Error::Models(handmotion_models::Error::Io { .. }) => "io",
            Error::Core(handmotion_core::Error::InvalidConfig(_) | handmotion_core::Error::SchemaViolation { .. })
            | Error::Models(handmotion_models::Error::InvalidConfig(_)) => "config",
            Error::Stage { .. } => "stage",
            Error::MissingCheckpoint(_) => "missing_checkpoint",
            Error::BadFrameIndex { .. } => "bad_frame_index",
            Error::Core(_) | Error::Models(_) => "failure",
        }
    }

    /// 2 for configuration errors, 4 for I/O, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" => 2,
            "io" => 4,
            _ => 3,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = json!({ "error": self.kind(), "exit_code": self.exit_code(), "message": self.to_string() });
        if let Error::Stage { stage, .. } = self {
            v["stage"] = json!(stage);
        }
        v
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}
