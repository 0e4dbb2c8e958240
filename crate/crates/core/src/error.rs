use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shape mismatch: expected {expected} values, got {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("operands live on different grids")]
    GridMismatch,

    #[error("density has imaginary part {0:e}, above tolerance")]
    ComplexDensity(f64),

    #[error("Gram matrix is ill-conditioned (condition number {0:e})")]
    SingularGram(f64),

    #[error("low-rank operator has rank {rank}, above cap {cap}")]
    RankOverflow { rank: usize, cap: usize },

    #[error("step rejected at t = {time}: Gram deviation {deviation:e} exceeds {limit:e}")]
    StepRejected {
        time: f64,
        deviation: f64,
        limit: f64,
    },

    #[error("Krylov propagation failed: {0}")]
    KrylovBreakdown(String),

    #[error("eigensolver did not converge: {0}")]
    Eigensolver(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("Fock basis too large: {0} states")]
    BasisOverflow(u128),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("time axis must be strictly increasing")]
    NonMonotoneTime,

    #[error("series too short: need at least {needed} samples, got {found}")]
    SeriesTooShort { needed: usize, found: usize },

    #[error("container format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
