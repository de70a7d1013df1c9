//! Crate-wide error type.

use thiserror::Error;

/// Everything that can go wrong when setting up or running a solver.
#[derive(Debug, Error)]
pub enum Error {
    /// A constructor argument violates a documented precondition.
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    /// Two objects that must share a grid/path bundle do not.
    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),

    /// An iterative solver exhausted its budget without meeting tolerance.
    /// Carries the contraction history so callers can diagnose the run.
    #[error("no convergence after {iterations} iterations (last increment {last:.3e}, tol {tol:.3e})")]
    NoConvergence {
        iterations: usize,
        last: f64,
        tol: f64,
        history: Vec<f64>,
    },

    /// A descent line search could not find an acceptable step.
    #[error("line search failed at outer iteration {iteration} (step floor {step:.3e})")]
    LineSearchFailed { iteration: usize, step: f64 },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
