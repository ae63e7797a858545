use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value violates a documented domain (negative density, inverted bounds, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{0}")]
    Geometry(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("region of interest: {0}")]
    Roi(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file content; `location` is a byte offset, a row, or a JSON pointer.
    #[error("{path}: parse error at {location}: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("{path}: truncated: expected {expected} bytes of pixel data, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    /// The optimizer ran out of objective evaluations.
    #[error("evaluation budget of {0} exhausted")]
    Budget(usize),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(
        path: impl Into<PathBuf>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            path: path.into(),
            location: location.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by the content or location of input data,
    /// as opposed to invalid parameters.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Parse { .. } | Error::Truncated { .. }
        )
    }
}
