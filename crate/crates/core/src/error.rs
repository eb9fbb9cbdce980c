use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("integrand is not integrable against the mark measure: {0}")]
    Integrability(String),

    #[error("quadrature did not converge on [{lo}, {hi}]: estimated error {error:.3e} after {evaluations} evaluations")]
    QuadratureNonConvergence {
        lo: f64,
        hi: f64,
        error: f64,
        evaluations: usize,
    },

    #[error("process is not ergodic: beta - H[f] = {margin} (must be > 0)")]
    NotErgodic { margin: f64 },

    #[error("cluster explosion: more than {cap} events before t = {time}")]
    ClusterExplosion { cap: usize, time: f64 },

    #[error("time {t} outside the simulated window [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("horizon mismatch: economic horizon {economic} vs moment horizon {moments}")]
    HorizonMismatch { economic: f64, moments: f64 },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("no bracketing interval found: {0}")]
    NoBracket(String),

    #[error("invalid contract: {0}")]
    InvalidContract(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
