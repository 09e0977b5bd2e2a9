use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = VinceError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum VinceError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("capacity exceeded: tried to write {requested} rows into a bank of {capacity}")]
    Capacity { requested: usize, capacity: usize },

    #[error("video too short: {available} frames, need at least {required}")]
    InsufficientLength { available: usize, required: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("numeric failure at iteration {iteration}: {reason}")]
    Numeric { iteration: u64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl VinceError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        VinceError::Dimension(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        VinceError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
