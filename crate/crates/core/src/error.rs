use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("mesh resolution {resolution} gives {across} elements across the bridge (need at least 4)")]
    UnresolvedBridge { resolution: usize, across: usize },

    #[error("element {element} has non-positive Jacobian {jacobian:e}")]
    SingularElement { element: usize, jacobian: f64 },

    #[error("eigensolver did not converge at k-point {k_index}: residual norm {residual:e}")]
    EigenNonConvergence { k_index: usize, residual: f64 },

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("quadrature not converged: {coarse:e} vs {fine:e} (relative change {change:e})")]
    QuadratureNotConverged { coarse: f64, fine: f64, change: f64 },

    #[error("integrator step size underflow at t = {t:e} s (achieved local error {achieved:e})")]
    StepSizeFailure { t: f64, achieved: f64 },

    #[error("least-squares problem is rank deficient: {0}")]
    RankDeficient(String),

    #[error("spectrum invalid: {0}")]
    InvalidSpectrum(String),
}

pub(crate) fn ensure(cond: bool, name: &'static str, reason: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, reason: reason() })
    }
}
