//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by configuration, argument validation, numerics and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented constraints.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A runtime argument (signal length, geometry, ...) is invalid.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// A numerical operation failed (non-finite input, singular system, ...).
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// Unsupported or malformed audio data.
    #[error("audio: {0}")]
    Audio(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("config file: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
