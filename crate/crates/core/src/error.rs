use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sequence error: expected chunk starting at frame {expected}, got {got}")]
    Sequence { expected: usize, got: usize },

    #[error("empty instance: {0}")]
    Empty(String),

    #[error("degenerate instance: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("conjugate gradient did not converge after {iterations} iterations (residual {residual:.3e}, target {target:.3e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        target: f64,
    },

    #[error("tensor file {path}: {field}: {detail}")]
    Format {
        path: PathBuf,
        field: &'static str,
        detail: String,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// True for errors caused by bad user input rather than a runtime or
    /// numerical failure. The CLI maps these to exit code 1.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Shape(_) | Error::Config(_) | Error::Parse(_) | Error::Format { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
