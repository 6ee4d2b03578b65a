//! Error types shared across the crate.

use thiserror::Error;

use crate::pha::ConvergenceReport;

/// Diagnostic payload attached to a degenerate belief update: the belief
/// that was being updated and the per-scenario log-weights that all
/// underflowed or went non-finite.
#[derive(Debug, Clone)]
pub struct DegenerateUpdate {
    pub prior: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl std::fmt::Display for DegenerateUpdate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "prior {:?}, log-weights {:?}",
            self.prior, self.log_weights
        )
    }
}

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Model construction or use violated a structural invariant.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// Operands with incompatible dimensions.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A numerical operation failed (singular factorization, conditioning
    /// estimate above 1e12, non-finite intermediate).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Every scenario's likelihood vanished; the posterior is undefined.
    /// Aborts the run rather than fabricating a belief.
    #[error("degenerate belief update: {0}")]
    DegenerateUpdate(DegenerateUpdate),

    /// The operation does not support this problem shape.
    #[error("unsupported configuration: {0}")]
    UnsupportedConfig(String),

    /// Progressive hedging hit the iteration cap before reaching `tol`.
    #[error(
        "progressive hedging did not converge: err {final_err:.3e} after {iterations} iterations"
    )]
    NotConverged {
        iterations: usize,
        final_err: f64,
        report: ConvergenceReport,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
