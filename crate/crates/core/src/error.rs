use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown joint name `{0}`")]
    InvalidName(String),

    #[error("{what} {value} out of range (expected < {limit})")]
    OutOfRange {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("schema error at row {row}: {message}")]
    Schema { row: usize, message: String },

    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("insufficient frames: need at least {needed}, got {got}")]
    InsufficientFrames { needed: usize, got: usize },

    #[error("video `{video_id}` rejected: {reason}")]
    VideoRejected { video_id: String, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("pairing error: samples have lengths {0} and {1}")]
    Pairing(usize, usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
