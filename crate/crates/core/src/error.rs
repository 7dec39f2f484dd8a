//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error(
        "eigenvalue iteration did not converge after {restarts} restarts \
         (best estimates [{d_min:.6e}, {d_max:.6e}], residuals {res_min:.3e}/{res_max:.3e})"
    )]
    NoConvergence {
        restarts: usize,
        d_min: f64,
        d_max: f64,
        res_min: f64,
        res_max: f64,
    },

    #[error("asymmetric entry at ({row}, {col})")]
    AsymmetricEntry { row: usize, col: usize },

    #[error("duplicate entry at ({row}, {col})")]
    DuplicateEntry { row: usize, col: usize },

    #[error("result is not symmetric at ({row}, {col}): {lhs:.6e} vs {rhs:.6e}")]
    SymmetryViolation { row: usize, col: usize, lhs: f64, rhs: f64 },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("dependence parameters outside the feasible region: {0}")]
    InfeasibleTheta(String),

    #[error("infeasible starting point: {0}")]
    InfeasibleStart(String),

    #[error("non-finite value in {0}")]
    NonfiniteValue(String),

    #[error("design matrix is numerically singular (condition number {cond:.3e})")]
    SingularDesign { cond: f64 },

    #[error("line search direction is not an ascent direction")]
    NoAscent,

    #[error("too few subsample blocks: {0}")]
    TooFewBlocks(String),

    #[error("subsampling failed: {0}")]
    SubsamplingFailed(String),

    #[error("size guard exceeded: {0}")]
    GuardExceeded(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Distinguishes model/feasibility failures from input and I/O failures.
    ///
    /// Used by callers that map errors to process exit codes.
    pub fn is_model_error(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::NoConvergence { .. }
                | Error::InfeasibleTheta(_)
                | Error::InfeasibleStart(_)
                | Error::NonfiniteValue(_)
                | Error::SingularDesign { .. }
                | Error::NoAscent
                | Error::TooFewBlocks(_)
                | Error::SubsamplingFailed(_)
                | Error::GuardExceeded(_)
                | Error::InvalidParameter(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
