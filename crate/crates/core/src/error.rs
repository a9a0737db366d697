use thiserror::Error;

use crate::runtime::Decision;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two inputs that must agree in shape or provenance do not.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("linear program infeasible: {0}")]
    Infeasible(String),

    /// A self-check that should never fail did.
    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("session already terminated with {0:?}")]
    Terminated(Decision),

    #[error("invalid outcome {0}: trial outcomes must be 0 or 1")]
    InvalidOutcome(i64),

    /// A structured document failed validation at `path`.
    #[error("invalid document at {path}: {message}")]
    Parse { path: String, message: String },

    #[error("journal diverges at step {step}: recorded {recorded:?}, recomputed {recomputed:?}")]
    JournalDivergence {
        step: u32,
        recorded: Decision,
        recomputed: Decision,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input, as opposed to internal
    /// self-check failures.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Invariant(_))
    }
}
