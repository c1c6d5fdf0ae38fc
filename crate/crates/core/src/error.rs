use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("AR generator is unstable: characteristic roots inside or on the unit circle at {roots:?}")]
    UnstableProcess { roots: Vec<(f64, f64)> },

    #[error("trace too short: need at least {required} samples, have {actual}")]
    TraceTooShort { required: usize, actual: usize },

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("predictor function rejected after {attempts} attempts (mse {mse:.4e} > threshold {threshold:.4e})")]
    PfRejected {
        attempts: usize,
        mse: f64,
        threshold: f64,
    },

    #[error("metric undefined: {0}")]
    Undefined(&'static str),

    #[error("unbounded bit count for lossless quantizer")]
    Unbounded,

    #[error("unsupported operation: {0}")]
    Unsupported(String),

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

    pub(crate) fn dim(expected: usize, actual: usize, context: &'static str) -> Self {
        Error::DimensionMismatch {
            expected,
            actual,
            context,
        }
    }
}
