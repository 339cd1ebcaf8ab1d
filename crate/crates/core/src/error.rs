use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the estimators, loaders and simulation harness.
#[derive(Debug, Error)]
pub enum PalsError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("response column `{0}` not found in header")]
    MissingResponse(String),

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("non-numeric value `{value}` at row {row}, column `{column}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("basis is rank deficient: {0}")]
    RankDeficient(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Coarse failure category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl PalsError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            PalsError::InvalidArgument(_) => ErrorKind::Usage,
            PalsError::Io { .. }
            | PalsError::Csv(_)
            | PalsError::MissingResponse(_)
            | PalsError::MissingColumn(_)
            | PalsError::NonNumeric { .. }
            | PalsError::InvalidData(_)
            | PalsError::DimensionMismatch(_) => ErrorKind::Data,
            PalsError::NotSymmetric(_) | PalsError::RankDeficient(_) | PalsError::Numerical(_) => {
                ErrorKind::Numerical
            }
        }
    }
}

pub type Result<T> = std::result::Result<T, PalsError>;
