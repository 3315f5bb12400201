use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("size out of range: {0}")]
    Size(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("training diverged in epoch {}", .0.epoch)]
    Diverged(Box<crate::training::Divergence>),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for bad requests, 2 for bad input data, 3 for
    /// numerical or internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) => 1,
            Error::Size(_) | Error::Shape(_) | Error::Data(_) | Error::Parse { .. } | Error::Io { .. } => 2,
            Error::Decomposition(_)
            | Error::Calibration(_)
            | Error::Numeric(_)
            | Error::Diverged(_)
            | Error::Internal(_) => 3,
        }
    }

    /// Short machine-readable category, used as the stderr prefix by the CLI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Size(_) => "size",
            Error::Domain(_) => "domain",
            Error::Shape(_) => "shape",
            Error::Decomposition(_) => "decomposition",
            Error::Data(_) => "data",
            Error::Parse { .. } => "parse",
            Error::Calibration(_) => "calibration",
            Error::Numeric(_) => "numeric",
            Error::Diverged(_) => "numeric",
            Error::Internal(_) => "internal",
            Error::Io { .. } => "io",
        }
    }
}
