//! Error type shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpinError {
    /// Invalid configuration or argument values.
    #[error("config: {0}")]
    Config(String),
    /// Numerical failure: non-convergence, singular fit, out-of-range result.
    #[error("numerical: {0}")]
    Numerical(String),
    /// Filesystem or format failure while reading/writing datasets.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    /// Malformed data encountered while parsing a dataset or waveform file.
    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, SpinError>;

impl SpinError {
    pub fn config(msg: impl Into<String>) -> Self {
        SpinError::Config(msg.into())
    }
    pub fn numerical(msg: impl Into<String>) -> Self {
        SpinError::Numerical(msg.into())
    }
    pub fn parse(msg: impl Into<String>) -> Self {
        SpinError::Parse(msg.into())
    }
}
