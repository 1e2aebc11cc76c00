use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid split at step {step}: cell {cell} {reason}")]
    InvalidSplit {
        step: usize,
        cell: usize,
        reason: &'static str,
    },

    #[error("invalid split vector at position {position}: {reason}")]
    InvalidSplitVector { position: usize, reason: String },

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("weights diverged: {0}")]
    Diverged(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidArgument(_) => 2,
            Error::Diverged(_) => 1,
            Error::Capacity(_) => 3,
            Error::Io { .. } | Error::Parse { .. } => 4,
            Error::InvalidSplit { .. } | Error::InvalidSplitVector { .. } => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
