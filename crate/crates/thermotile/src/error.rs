//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed on-disk data: bad magic, truncated payload, bad JSON.
    #[error("format: {0}")]
    Format(String),

    /// Invalid configuration or arguments.
    #[error("config: {0}")]
    Config(String),

    /// Grids or tensors that should be co-registered are not.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Numerical failure mid-computation (degenerate stats, divergence).
    #[error("compute: {0}")]
    Compute(String),

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },
}

impl Error {
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
    pub fn compute(msg: impl Into<String>) -> Self {
        Error::Compute(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
