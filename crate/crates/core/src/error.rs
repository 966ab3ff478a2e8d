use std::path::Path;

use thiserror::Error;

use crate::backends::BackendError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("invalid filename: {0}")]
    InvalidFilename(String),

    #[error("instruction text is empty")]
    EmptyInstruction,

    #[error("trajectory has no steps")]
    EmptyTrajectory,

    #[error("duplicate file {0:?} in one assistant message")]
    DuplicateFile(String),

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("pool error: {0}")]
    Pool(String),

    #[error("embedder fingerprint mismatch: pool built with {expected:?}, got {found:?}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("embedding dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("instruction synthesis failed: {0}")]
    Synthesis(String),

    #[error("unknown {kind} {name:?}; available: {available}")]
    UnknownStrategy { kind: &'static str, name: String, available: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Format { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.display().to_string(), source }
    }
}
