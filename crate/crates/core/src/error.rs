//! Error taxonomy shared by all solvers.

use thiserror::Error;

/// Errors raised by solvers, samplers and estimators.
#[derive(Debug, Error)]
pub enum Error {
    /// The boundary map g(x) = x - psi(flow_1(x)) has no sign change within
    /// the bracket cap; the problem has no solution on this path (or the
    /// root lies beyond any reasonable bracket).
    #[error("no fixed point found (bracket expanded to [{left:e}, {right:e}] without a sign change)")]
    NoFixedPoint { left: f64, right: f64 },

    /// The boundary map vanishes on an interval: infinitely many solutions.
    #[error("degenerate boundary map: |g| < {tol:e} across a bracket of width {width:e}")]
    MultipleSolutions { width: f64, tol: f64 },

    /// A caller-supplied argument violates a documented contract.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation needs an analytic capability (partial derivative,
    /// slope envelope, bound) that the input did not declare.
    #[error("missing capability: {0}")]
    MissingCapability(String),

    /// A declared hypothesis required by the solver does not hold.
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    /// The ODE integrator produced a non-finite value.
    #[error("numerical overflow at t = {t}")]
    NumericalOverflow { t: f64 },

    /// Root refinement hit its iteration cap before meeting the tolerance.
    #[error("root refinement did not reach tolerance {tol:e} (residual {residual:e})")]
    NoConvergence { tol: f64, residual: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
