use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit reports.
///
/// Variants fall into three families that the command-line driver maps to
/// distinct exit codes: data problems ([`Error::is_data_error`]), infeasible
/// analyses ([`Error::is_infeasible`]) and everything else.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),

    #[error("invalid record {image_id}: {reason}")]
    InvalidRecord { image_id: String, reason: String },

    #[error("dataset failed validation: {}", .0.summary())]
    Validation(Box<ValidationReport>),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("empty view: {0}")]
    EmptyView(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("undefined rate: {0}")]
    UndefinedRate(String),

    #[error("insufficient candidate pool: need {needed}, have {available}")]
    InsufficientPool { needed: usize, available: usize },

    #[error("infeasible age bin {bin}: reference needs {needed}, source has {available} (deficit {})", needed - available)]
    InfeasibleBin {
        bin: String,
        needed: usize,
        available: usize,
    },

    #[error("variance target {target} unreachable: curve tops out at {reached}")]
    UnreachableVariance { target: f64, reached: f64 },

    #[error("unknown image id: {0}")]
    UnknownImage(String),

    #[error("invalid config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Corrupt {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Problems with the input data itself (bad files, failed validation).
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Corrupt { .. }
                | Error::Inconsistent(_)
                | Error::InvalidRecord { .. }
                | Error::Validation(_)
                | Error::UnknownImage(_)
        )
    }

    /// The data is fine but the requested analysis cannot be carried out on it.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::InsufficientPool { .. }
                | Error::InfeasibleBin { .. }
                | Error::UnreachableVariance { .. }
                | Error::Degenerate(_)
                | Error::UndefinedRate(_)
                | Error::EmptyView(_)
        )
    }
}
