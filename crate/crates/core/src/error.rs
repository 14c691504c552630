use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("failed to decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("unsupported format for {path}: {message}")]
    UnsupportedFormat { path: PathBuf, message: String },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("kernel {kernel} does not fit a {height}x{width} image")]
    KernelTooLarge {
        kernel: usize,
        height: usize,
        width: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("covariance is not positive definite: {0}")]
    SingularCovariance(String),

    #[error("patch of size {size} at ({row}, {col}) exceeds a {height}x{width} image")]
    PatchOutOfBounds {
        size: usize,
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },

    #[error("adaptive constraints unreachable: {0}")]
    ConstraintsUnreachable(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
