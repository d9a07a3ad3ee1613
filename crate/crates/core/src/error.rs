//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum ConfotError {
    /// A caller-supplied parameter is outside its valid range.
    #[error("invalid parameter {name}: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// Input data violates a precondition (non-finite values, empty sets, ...).
    #[error("invalid data: {0}")]
    Data(String),

    /// An index (class label, sample index) is out of range.
    #[error("index out of range: {name} = {value}, limit {limit}")]
    Index {
        name: &'static str,
        value: usize,
        limit: usize,
    },

    /// Matrix or vector dimensions disagree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Two artifacts that must agree were produced under different settings.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An on-disk file does not conform to its declared format.
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    /// A text file failed to parse.
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    /// A numeric routine produced a non-finite or otherwise unusable value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ConfotError>;
