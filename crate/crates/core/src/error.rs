use std::path::PathBuf;

use thiserror::Error;

/// Every failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("image too small: {0}")]
    ImageTooSmall(String),
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("missing gradient for parameter '{0}'")]
    MissingGradient(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("provenance error: {0}")]
    Provenance(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::ShapeMismatch(format!($($arg)*))
    };
}
pub(crate) use shape_err;
