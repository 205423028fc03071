//! Error type shared by all core modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Dimensions of an input do not match what the operation expects.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// An argument is outside the operation's domain.
    #[error("invalid parameter: {0}")]
    Param(String),
    /// A NaN or infinity reached an operation that requires finite values.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    /// A file being parsed does not conform to its format.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
