use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by every pipeline stage.
#[derive(Debug, Error)]
pub enum PaceError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    IoOther(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("{malformed} of {total} records are malformed (limit 1%); first error: {first}")]
    TooManyMalformed {
        malformed: usize,
        total: usize,
        first: String,
    },

    #[error("invalid header: {0}")]
    Header(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("labels contain a single class: {0}")]
    SingleClass(String),

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, PaceError>;

impl PaceError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PaceError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        PaceError::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl From<csv::Error> for PaceError {
    fn from(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line() as usize).unwrap_or(0);
        PaceError::Record {
            line,
            message: err.to_string(),
        }
    }
}
