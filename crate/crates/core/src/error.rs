use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator and the attack pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("degenerate update: {0}")]
    DegenerateUpdate(String),

    #[error("config validation failed: {0}")]
    Validation(String),

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Short machine-readable tag, used in flagged CSV rows.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape_error",
            Error::Argument(_) => "argument_error",
            Error::Numeric(_) => "numeric_error",
            Error::State(_) => "state_error",
            Error::DegenerateUpdate(_) => "degenerate_update",
            Error::Validation(_) => "validation_error",
            Error::Io { .. } => "io_error",
            Error::Parse { .. } => "parse_error",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
