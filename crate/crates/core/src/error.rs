use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Variants are grouped by [`ErrorKind`] so the command-line front end can map
/// them onto stable exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("empty input to {0}")]
    EmptyInput(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid probability vector: {0}")]
    InvalidProbabilities(String),
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("scenario subset `{0}` is empty")]
    EmptySubset(&'static str),
    #[error("missing training target: {0}")]
    MissingTarget(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("malformed data in {path}: {reason}")]
    Data { path: PathBuf, reason: String },
    #[error("malformed checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("hash mismatch for {what}: expected {expected}, found {found}")]
    HashMismatch {
        what: String,
        expected: String,
        found: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Model,
    Io,
    Internal,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorKind::Config,
            Error::Data { .. }
            | Error::EmptySubset(_)
            | Error::MissingTarget(_)
            | Error::InvalidObservation(_)
            | Error::HashMismatch { .. } => ErrorKind::Data,
            Error::Checkpoint { .. } => ErrorKind::Model,
            Error::Io { .. } => ErrorKind::Io,
            Error::DimensionMismatch { .. }
            | Error::EmptyInput(_)
            | Error::NonFinite(_)
            | Error::InvalidProbabilities(_) => ErrorKind::Internal,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
