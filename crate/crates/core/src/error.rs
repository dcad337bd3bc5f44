//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A model object failed its structural invariants.
    #[error("invalid {object}: {}", violations.join("; "))]
    Invalid {
        object: &'static str,
        violations: Vec<String>,
    },

    /// A configuration value is out of range or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data is malformed (shape mismatch, non-finite entries, bad file contents).
    #[error("data error: {0}")]
    Data(String),

    /// A solver failed to produce an estimate.
    #[error("solver {solver} failed: {message}")]
    Solver { solver: String, message: String },

    /// A well-posed input turned degenerate mid-computation (rank collapse,
    /// empty candidate set, unsatisfiable rejection sampling).
    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(object: &'static str, violations: Vec<String>) -> Self {
        Error::Invalid { object, violations }
    }

    pub fn solver(solver: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Solver {
            solver: solver.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 2 for bad inputs, 3 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Solver { .. } | Error::Degenerate(_) => 3,
            _ => 2,
        }
    }
}
