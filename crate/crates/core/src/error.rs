use std::io;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{block}`: expected {expected:?}, got {actual:?}")]
    Shape {
        block: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("backward called without a recorded forward trace")]
    MissingTrace,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("model is not trained: {0}")]
    Untrained(String),

    #[error("handshake rejected: {0}")]
    Handshake(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
