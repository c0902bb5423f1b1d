use thiserror::Error;

/// Errors produced anywhere in the segmentation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A NIfTI header field holds a value this reader does not accept.
    #[error("malformed NIfTI header: field `{field}`: {reason}")]
    Format { field: &'static str, reason: String },

    #[error("unsupported NIfTI datatype code {0} (expected 2=uint8, 4=int16 or 16=float32)")]
    UnsupportedType(i16),

    #[error("payload size mismatch: expected {expected} bytes, found {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    /// The value cannot be represented in the target container.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("arity mismatch: expected {expected} items, got {actual}")]
    Arity { expected: usize, actual: usize },

    #[error("batch-norm running statistics are uninitialized (no training step seen)")]
    UninitializedStats,

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
