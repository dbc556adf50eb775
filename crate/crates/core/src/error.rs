//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Vector/matrix dimensions do not agree.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A numeric argument is outside the mathematical domain of the
    /// operation (e.g. a non-positive variance).
    #[error("domain error: {0}")]
    Domain(String),

    /// An image or tensor has the wrong shape for the consumer.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// An index (class label, sample index) is out of range.
    #[error("index error: {0}")]
    Index(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A file exists but its contents are not in the expected format.
    #[error("format error: {0}")]
    Format(String),

    /// The dataset manifest is malformed or references missing data.
    #[error("manifest error: {0}")]
    Manifest(String),
}

pub type Result<T> = std::result::Result<T, Error>;
