//! Error type shared across the toolkit.

use thiserror::Error;

/// Errors raised by state-space construction, certification and analysis.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("evaluation point is numerically a pole (condition estimate {cond:.3e})")]
    SingularEvaluation { cond: f64 },

    #[error("1 is numerically an eigenvalue of the state matrix")]
    PoleAtOne,

    #[error("system must be strictly proper (D = 0)")]
    NotStrictlyProper,

    #[error("matrix exponential overflowed double precision")]
    Overflow,

    #[error(
        "storage equality constraint inconsistent (residual {residual:.3e}): \
         no symmetric storage matrix satisfies the output constraint"
    )]
    InconsistentConstraint { residual: f64 },

    #[error("storage violates the output constraint (residual {residual:.3e})")]
    ConstraintNotSatisfied { residual: f64 },

    #[error("state matrix numerically singular (sigma_min/sigma_max = {ratio:.3e})")]
    SingularA { ratio: f64 },

    #[error("feedthrough inconsistent with a one-step output advance (residual {residual:.3e})")]
    NotStepAdvance { residual: f64 },

    #[error("theta = {theta} is within {tol:.1e} of a pole of the transfer matrix")]
    PoleProximity { theta: f64, tol: f64 },

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("not a simple unit-circle pole: {0}")]
    NotSimplePole(String),

    #[error("pole angle {0} is outside the open upper semicircle (0, pi)")]
    NotOnUpperSemicircle(f64),

    #[error("algebraic loop: both systems have direct feedthrough")]
    AlgebraicLoop,

    #[error("spectrum is not real within tolerance (max imaginary part {0:.3e})")]
    ComplexSpectrum(f64),

    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("trajectory carries no Lyapunov data (loop closed without certificates)")]
    MissingCertificates,

    #[error("non-finite evaluation at sample {index}")]
    NonFiniteEvaluation { index: u64 },

    #[error("invalid storage certificate: {0}")]
    InvalidStorage(String),
}

pub type Result<T> = std::result::Result<T, Error>;
