use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {dimension} exceeds the supported maximum of {max} for {what}")]
    Capacity {
        what: &'static str,
        dimension: usize,
        max: usize,
    },

    #[error("{what}: expected length {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("value at index {index} is not finite")]
    NonFinite { index: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("loss became non-finite at epoch {epoch}, step {step} (mse {mse}, penalty {penalty})")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        mse: f64,
        penalty: f64,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("row {row}, column `{column}`: {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Capacity { .. } => "capacity",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NonFinite { .. } => "non_finite",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::EmptyDataset => "empty_dataset",
            Error::Parse { .. } => "parse",
            Error::Cell { .. } => "cell",
            Error::Schema(_) => "schema",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
