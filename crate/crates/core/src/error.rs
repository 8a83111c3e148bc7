use thiserror::Error;

use crate::linop::OperatorKind;
use crate::solvers::StopReason;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{kind:?} operator does not support {capability}")]
    Unsupported {
        capability: &'static str,
        kind: OperatorKind,
    },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate start: right-hand side is zero")]
    DegenerateStart,

    #[error("matrix is numerically rank deficient (rank {rank} of {dim})")]
    RankDeficient { rank: usize, dim: usize },

    #[error("{stage}: solver stopped with {stop:?} after {iterations} iterations")]
    NotConverged {
        stage: String,
        stop: StopReason,
        iterations: usize,
    },

    #[error("non-finite value in {context}{}", .index.map(|i| format!(" at index {i}")).unwrap_or_default())]
    NonFinite {
        context: String,
        index: Option<usize>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("optimization diverged at step {step} (loss trace has {} entries)", .trace.len())]
    Diverged { step: usize, trace: Vec<f64> },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps a solver failure with the name of the stage that ran it.
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            Error::NotConverged {
                stage: inner,
                stop,
                iterations,
            } => Error::NotConverged {
                stage: format!("{stage}: {inner}"),
                stop,
                iterations,
            },
            other => other,
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Shape {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

pub(crate) fn check_finite(context: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite {
            context: context.to_string(),
            index: Some(i),
        }),
        None => Ok(()),
    }
}
