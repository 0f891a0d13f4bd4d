//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument or malformed construction input.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Shapes of matrices/vectors do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A numerical routine failed to converge or collapsed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Requested quantity is undefined for the given data.
    #[error("undefined: {0}")]
    Undefined(String),

    /// Dataset parse failure, with file and line context where available.
    #[error("parse error{}: {msg}", location.as_ref().map(|l| format!(" ({l})")).unwrap_or_default())]
    Parse {
        msg: String,
        location: Option<String>,
    },

    /// Experiment configuration rejected.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn undefined(msg: impl Into<String>) -> Self {
        Error::Undefined(msg.into())
    }

    pub fn parse(msg: impl Into<String>, location: Option<String>) -> Self {
        Error::Parse {
            msg: msg.into(),
            location,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
