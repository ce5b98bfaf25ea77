//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes or lengths are inconsistent.
    #[error("size mismatch: {0}")]
    Size(String),

    /// A value that must be finite was NaN or infinite.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An invalid configuration value.
    #[error("invalid config: {0}")]
    Config(String),

    /// A persisted artifact failed validation (truncation, bad checksum).
    #[error("integrity error: {0}")]
    Integrity(String),

    /// A persisted artifact does not fit the target it is being applied to.
    #[error("compatibility error: {0}")]
    Compatibility(String),

    /// A persisted artifact has an unknown format version.
    #[error("version error: {0}")]
    Version(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn size(msg: impl Into<String>) -> Self {
        Error::Size(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
