//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Structural problem: channel mismatch, invalid layer spec, bad option.
    #[error("configuration error: {0}")]
    Config(String),

    /// Weight-normalization direction with zero norm.
    #[error("degenerate weight: {0}")]
    DegenerateWeight(String),

    /// Tensor shapes do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A container or file does not have the expected layout.
    #[error("format error: {0}")]
    Format(String),

    /// A bitstream or code sequence is damaged.
    #[error("corrupt stream at byte {offset}: {msg}")]
    CorruptStream { offset: usize, msg: String },

    /// Statistics could not be computed (empty or constant corpus, ...).
    #[error("statistics error: {0}")]
    Stats(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
