use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate 6D rotation: {0}")]
    DegenerateRotation(String),
    #[error("matrix is not a rotation (orthonormality error {0:e})")]
    NotARotation(f64),
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("joint index {index} out of range for skeleton with {len} joints")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("bad magic in {0}")]
    BadMagic(String),
    #[error("unsupported container version {0}")]
    VersionUnsupported(u32),
    #[error("truncated payload: {0}")]
    TruncatedPayload(String),
    #[error("frame count mismatch: body has {body} frames, hands have {hands}")]
    FrameCountMismatch { body: usize, hands: usize },
    #[error("objective became non-finite at iteration {iteration}: {detail}")]
    NonFiniteObjective { iteration: usize, detail: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown anchor `{0}`")]
    UnknownAnchor(String),
    #[error("schema violation at `{path}`: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("no lexicon entry for token `{0}`")]
    MissingLexiconEntry(String),
    #[error("LLM endpoint error: {0}")]
    EndpointError(String),
    #[error("could not parse LLM response: {0}")]
    ParseError(String),
    #[error("no fixture recorded for request {0}")]
    FixtureMiss(String),
    #[error("zero vector at index {0}")]
    ZeroVector(usize),
    #[error("unknown word `{0}`")]
    UnknownWord(String),
    #[error("covariance has eigenvalue {0:e} below tolerance")]
    CovarianceSingularBeyondTolerance(f64),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
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

    pub fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::SchemaViolation {
            path: path.into(),
            message: message.into(),
        }
    }
}
