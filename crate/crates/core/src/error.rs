//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of two operands do not compose.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An operation needs more sample rows than it was given.
    #[error("insufficient samples: needed {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    /// A value that must be finite (or a matrix that must be invertible) is not.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Invalid configuration: bad plan, weights, or experiment settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input file could not be parsed.
    #[error("parse error in {path} at line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
