//! Crate-wide error type.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller violated an operation precondition (e.g. stepping a finished
    /// episode or feeding an unclamped power into a transition).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid parameter set or configuration value.
    #[error("invalid config: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("invalid data: {0}")]
    Validation(String),

    /// Tensor/vector shape mismatch in the neural substrate.
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    /// A numeric quantity became non-finite where finiteness is required.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },

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
}

pub type Result<T> = std::result::Result<T, Error>;
