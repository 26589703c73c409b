use thiserror::Error;

/// Failures reported by the solvers. Numeric payloads are widened to `f64`
/// so the error type does not depend on the scalar parameter.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("interaction matrix singular at p = ({p1}, {p2}): det = {delta:e}")]
    Singularity { p1: f64, p2: f64, delta: f64 },

    #[error("jump not allowed from ({p1}, {p2}): p1 + p2 < 0")]
    JumpNotAllowed { p1: f64, p2: f64 },

    #[error("no convergence after {iterations} iterations, residual {residual:e}")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("no bracketing interval found, best residual {residual:e}")]
    NoBracket { residual: f64 },

    #[error("state exploded at t = {t}")]
    Explosion { t: f64 },

    #[error("all {n_paths} sample paths exploded")]
    AllPathsExploded { n_paths: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
