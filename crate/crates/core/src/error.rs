use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents disagree. `axis` names the offending axis.
    #[error("dimension mismatch in {op}: {axis} expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        axis: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, axis: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            op,
            axis: axis.into(),
            expected,
            got,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Usage(_) => 2,
            Error::Dimension { .. } | Error::Format { .. } | Error::Data(_) | Error::Io { .. } => 3,
            Error::Numeric(_) => 4,
        }
    }
}
