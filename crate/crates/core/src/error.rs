use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("series '{series}' at {position}: {rule}")]
    InvalidSeries {
        series: String,
        position: String,
        rule: String,
    },

    #[error("series '{series}' has {len} observations, needs at least {required}")]
    SeriesTooShort {
        series: String,
        len: usize,
        required: usize,
    },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("lookback maximum must be positive, got {0}")]
    NonPositiveScale(f64),

    #[error("target value must be positive: row {row}, column {col}, value {value}")]
    NonPositiveTarget { row: usize, col: usize, value: f64 },

    #[error("target row {row} has zero variance")]
    ZeroVariance { row: usize },

    #[error("non-finite gradient for parameter '{0}'")]
    NonFiniteGradient(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("loss node is not a scalar: shape {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("no training windows available")]
    NoWindows,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unknown series '{0}'")]
    UnknownSeries(String),

    #[error("non-finite training loss at epoch {epoch}, batch {batch} (series: {series})")]
    Divergence {
        epoch: usize,
        batch: usize,
        series: String,
    },

    #[error("inputs are misaligned: {0}")]
    Misaligned(String),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Errors caused by bad invocations or configuration rather than by a
    /// failure while running. The command-line front end maps these to exit
    /// code 2.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Config { .. } | Error::UnknownSeries(_) => true,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            _ => false,
        }
    }
}
