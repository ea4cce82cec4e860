//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up; the message names the offending axes.
    #[error("dimension error: {0}")]
    Dim(String),

    /// Invalid argument to an operation (empty batch, non-scalar loss, ...).
    #[error("argument error: {0}")]
    Arg(String),

    /// A statistic is undefined (e.g. batch norm over an empty extent).
    #[error("statistics error: {0}")]
    Stats(String),

    /// Model configuration violates one of its invariants.
    #[error("config error: {0}")]
    Config(String),

    /// Image decoding failed; `offset` is the byte position in the file.
    #[error("decode error at byte {offset}: {msg}")]
    Decode { offset: usize, msg: String },

    /// Dataset manifest is malformed or inconsistent.
    #[error("manifest error: {0}")]
    Manifest(String),

    /// Checkpoint file is malformed, truncated, or incompatible.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training cannot proceed (missing gradient, non-finite loss, ...).
    #[error("training error: {0}")]
    Train(String),

    /// Metrics are undefined for the given split (e.g. a single-class split).
    #[error("metrics error: {0}")]
    Metrics(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dim(msg.into())
    }
    pub fn arg(msg: impl Into<String>) -> Self {
        Error::Arg(msg.into())
    }
}
