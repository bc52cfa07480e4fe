use std::path::PathBuf;

use crate::simulator::external::ExternalError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
    External,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate item id `{0}`")]
    DuplicateId(String),
    #[error("unknown item id `{item_id}` (line {line})")]
    UnknownItem { item_id: String, line: usize },
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("non-finite loss at step {step}")]
    Divergence { step: usize },
    #[error("no admissible candidate for slots {slots:?} (copy, slot)")]
    Starvation { slots: Vec<(usize, usize)> },
    #[error("instance too large: {0}")]
    TooLarge(String),
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error(transparent)]
    External(#[from] ExternalError),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config { .. } => ErrorKind::Config,
            Error::Divergence { .. } | Error::Degenerate(_) | Error::TooLarge(_) => {
                ErrorKind::Numerical
            }
            Error::External(_) => ErrorKind::External,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
