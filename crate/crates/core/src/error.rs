use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library reports. `category()` gives the stable
/// machine-parsable tag the CLI prints.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left:?} vs {right:?} ({context})")]
    Shape {
        left: Vec<usize>,
        right: Vec<usize>,
        context: String,
    },
    #[error("invalid axis {axis} for tensor of rank {ndim}")]
    Axis { axis: usize, ndim: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("infeasible acceleration {accel} for {lines} phase-encode lines")]
    InfeasibleAcceleration { accel: f64, lines: usize },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("non-finite loss at step {step} (parameter norms: {norms})")]
    NonFiniteLoss { step: usize, norms: String },
    #[error("format error in {path} at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn shape(left: &[usize], right: &[usize], context: impl Into<String>) -> Self {
        Error::Shape {
            left: left.to_vec(),
            right: right.to_vec(),
            context: context.into(),
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } | Error::Axis { .. } => "shape",
            Error::Config(_) => "config",
            Error::InfeasibleAcceleration { .. } => "infeasible-acceleration",
            Error::Numeric(_) => "numeric",
            Error::UndefinedMetric(_) => "undefined-metric",
            Error::NonFiniteLoss { .. } => "non-finite-loss",
            Error::Format { .. } => "format",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
        }
    }
}
