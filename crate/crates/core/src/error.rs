use std::io;

use thiserror::Error;

/// Errors raised anywhere in the core library.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("illegal exchange at site {site}: expected (1, 0), found ({occupied}, {ahead})")]
    IllegalExchange { site: usize, occupied: u8, ahead: u8 },

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },

    #[error("degenerate sample: {0}")]
    DegenerateVariance(String),

    #[error("normalization mismatch: {0} vs {1}")]
    NormalizationMismatch(String, String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("header/payload length disagreement: header declares {declared} bytes, payload has {actual}")]
    LengthMismatch { declared: usize, actual: usize },

    #[error("malformed header: {0}")]
    Header(String),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { loss: f64, epoch: usize, batch: usize },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> CoreError {
    CoreError::InvalidParam {
        name,
        reason: reason.into(),
    }
}
