use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    /// A quantity that must stay away from zero (a normalizer, a row norm) did not.
    #[error("numeric degeneracy in {op} at row {row}: {detail}")]
    Degenerate {
        op: &'static str,
        row: usize,
        detail: String,
    },

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("op count mismatch for {variant}: {field} expected {expected}, got {actual}")]
    CountMismatch {
        variant: String,
        field: &'static str,
        expected: u64,
        actual: u64,
    },

    #[error("malformed hash function file: {0}")]
    Format(String),

    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, err: impl ToString) -> Self {
        Error::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Parameter { .. } => 2,
            Error::Degenerate { .. } | Error::NonFinite { .. } => 3,
            Error::Io { .. } | Error::Format(_) => 4,
            _ => 1,
        }
    }
}
