use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum AtgError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("normalized error undefined: ||A x*|| is zero")]
    DegenerateReference,

    #[error("least-squares system is singular")]
    SingularSystem,

    #[error("redundancy S={redundancy} must be below the worker count N={workers}")]
    InvalidRedundancy { workers: usize, redundancy: usize },

    #[error("worker index {index} out of range for {workers} workers")]
    InvalidWorker { index: usize, workers: usize },

    #[error("dataset has {samples} samples, fewer than {blocks} blocks")]
    TooFewSamples { samples: usize, blocks: usize },

    #[error("worker shard is empty")]
    EmptyShard,

    #[error("csv {path}: line {line}, column {column}: {message}")]
    Csv {
        path: PathBuf,
        line: u64,
        column: usize,
        message: String,
    },

    #[error("dataset cache: {0}")]
    Cache(String),

    #[error("no worker delivered an update in epoch {epoch}; every worker is unreachable")]
    AllWorkersLost { epoch: u64 },

    #[error("schemes cannot be compared: {0}")]
    SchemeMismatch(String),

    #[error("protocol error at byte {offset}: {message}")]
    Protocol { offset: usize, message: String },

    #[error("config: {key}: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AtgError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        AtgError::InvalidArgument(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        AtgError::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = AtgError> = std::result::Result<T, E>;
