use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the MELCOT library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("negative target entry {value} at {location}")]
    NegativeTarget { location: String, value: f64 },

    #[error("degenerate marginal: {0}")]
    DegenerateMarginal(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible transport problem: {0}")]
    Infeasible(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs or configuration, as opposed to
    /// failures that happen while computing.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Numerical(_) | Error::Infeasible(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
