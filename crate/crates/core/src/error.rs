//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A contract violation: invalid dimensions, out-of-range parameters,
    /// mismatched shapes.
    #[error("domain error: {0}")]
    Domain(String),

    /// A malformed file or byte stream: bad magic, truncation, dim overflow,
    /// unparsable manifests or configs.
    #[error("format error: {0}")]
    Format(String),

    /// A numerical failure, e.g. a singular system in the ridge solver.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
