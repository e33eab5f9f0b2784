//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("zero norm: cannot normalize a zero vector")]
    ZeroNorm,

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("batch size mismatch: expected {expected}, got {got}")]
    BatchSizeMismatch { expected: usize, got: usize },

    #[error("batch size {b} exceeds the tensor cap {cap}")]
    BatchTooLarge { b: usize, cap: usize },

    #[error("batch is not normalized; call normalized() first")]
    NotNormalized,

    #[error("unsupported modality count q={q}: only q=3 is supported")]
    UnsupportedModalityCount { q: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point cloud has no valid points")]
    NoValidPoints,

    #[error("unknown class '{0}'")]
    UnknownClass(String),

    #[error("duplicate class '{0}'")]
    DuplicateClass(String),

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}, step {step}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        step: u64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Shorthand for [`Error::InvalidInput`] with a formatted message.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
