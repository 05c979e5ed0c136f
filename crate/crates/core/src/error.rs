use thiserror::Error;

/// Errors produced by the model, solvers, trainer, and file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("content id {id} is out of range 1..={num_contents}")]
    InvalidContent { id: usize, num_contents: usize },

    #[error("action {action} is out of range 0..={max}")]
    InvalidAction { action: usize, max: usize },

    #[error("state index {index} is out of range for a space of {size} states")]
    StateIndexOutOfRange { index: usize, size: usize },

    #[error("state does not belong to the configured state space: {0}")]
    InvalidState(String),

    #[error("state space has {size} states, above the limit of {limit}")]
    StateSpaceTooLarge { size: u128, limit: u128 },

    #[error("{policies} stationary policies exceed the enumeration limit of {limit}")]
    EnumerationTooLarge { policies: u128, limit: u128 },

    #[error("power iteration did not converge after {iterations} iterations (last L1 change {change:e})")]
    PowerIterationNotConverged { iterations: usize, change: f64 },

    #[error("relative value iteration stopped after {iterations} iterations above span tolerance {tolerance:e}")]
    SolverNotConverged { iterations: usize, tolerance: f64 },

    #[error("non-finite loss at training step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("config line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of a numerical procedure rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::PowerIterationNotConverged { .. }
                | Error::SolverNotConverged { .. }
                | Error::NonFiniteLoss { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
