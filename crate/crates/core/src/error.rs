//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide error enum. Variants map onto the failure classes the public
/// API can hit: bad math inputs, bad configurations, malformed containers,
/// and plain I/O trouble.
#[derive(Debug, Error)]
pub enum TemError {
    /// A numeric argument is outside the mathematical domain of the
    /// operation (negative energy, non-positive bandwidth, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A time or index fell outside the range the artifact covers.
    #[error("range error: {0}")]
    Range(String),

    /// Array/grid dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// A configuration is internally inconsistent or violates an operating
    /// precondition (bias below amplitude bound, too-coarse step, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A serialized container is malformed (bad magic, truncated payload,
    /// unsupported version or codec).
    #[error("format error: {0}")]
    Format(String),

    /// A stream decoded structurally but its contents are inconsistent.
    #[error("decode error at item {index}: {msg}")]
    Decode { index: usize, msg: String },

    /// A size limit was exceeded (e.g. direct solver capacity).
    #[error("size error: {0}")]
    Size(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TemError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        TemError::Domain(msg.into())
    }
    pub(crate) fn range(msg: impl Into<String>) -> Self {
        TemError::Range(msg.into())
    }
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        TemError::Shape(msg.into())
    }
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        TemError::Config(msg.into())
    }
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        TemError::Format(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, TemError>;
