use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("polynomial is identically zero on the requested interval")]
    ZeroPolynomial,
    #[error("two sign changes near {at} cannot be separated at tolerance {tol}")]
    UnresolvedCluster { at: f64, tol: f64 },
    #[error("parameters out of range: {0}")]
    OutOfRange(String),
    #[error("no positive solution: {0}")]
    NoPositiveSolution(String),
    #[error("iteration did not converge: {0}")]
    NoConvergence(String),
    #[error("matching failure: junction jump {jump:e} exceeds {tol:e}")]
    MatchingFailure { jump: f64, tol: f64 },
    #[error("expected {expected} certified roots in (0,1), found {found}")]
    RootCountMismatch { expected: usize, found: usize },
    #[error("singular state: nonlinearity undefined at phi = 0 (alpha < 0, no regularization)")]
    SingularState,
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("integration aborted: {0}")]
    Integration(String),
    #[error("trajectory did not settle onto a periodic orbit within s = {s_max}")]
    NoSettling { s_max: f64 },
    #[error("Newton iteration diverged: {0}")]
    NewtonDiverged(String),
    #[error("invalid bracket: {0}")]
    BracketInvalid(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;
