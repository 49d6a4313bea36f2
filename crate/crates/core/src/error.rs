use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = ClarError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ClarError {
    #[error("{op}: shape mismatch {shapes}")]
    Shape { op: &'static str, shapes: String },

    #[error("backward called on a tape that was already consumed; re-run the forward pass")]
    StaleTape,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{0}")]
    MissingArtifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ClarError {
    pub(crate) fn shape(op: &'static str, shapes: impl Into<String>) -> Self {
        ClarError::Shape { op, shapes: shapes.into() }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        ClarError::InvalidArgument(msg.into())
    }
}
