//! Crate-wide error type.

use std::path::PathBuf;

/// Errors reported by volume I/O, geometry checks, and the registration
/// driver. I/O-free numerical code returns values, not errors; anything
/// that can be rejected up front (shape mismatches, bad parameters,
/// malformed files) lands here.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: not a volume file (bad magic)")]
    BadMagic { path: PathBuf },

    #[error("{path}: unsupported format version {found}")]
    UnsupportedVersion { path: PathBuf, found: u32 },

    #[error("{path}: unsupported data type code {found}")]
    UnsupportedDtype { path: PathBuf, found: u32 },

    #[error("{path}: file truncated (expected {expected} bytes, found {found})")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{path}: {what}")]
    MalformedFile { path: PathBuf, what: String },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("dimension mismatch: {what} is {found:?}, expected {expected:?}")]
    DimsMismatch {
        what: String,
        found: (usize, usize, usize),
        expected: (usize, usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wraps an [`std::io::Error`] with the path it occurred on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Rejects a bad parameter or unusable input with a message.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
