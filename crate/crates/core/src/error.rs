use thiserror::Error;

/// Errors raised by the numerical kernels and the control-problem model.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not Hermitian (deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("matrix is not unitary (deviation {0:.3e})")]
    NotUnitary(f64),

    #[error("matrix exponential overflow (norm {0:.3e})")]
    ExpmOverflow(f64),

    #[error("matrix is not positive definite (pivot {pivot} failed)")]
    NotPositiveDefinite { pivot: usize },

    #[error("fidelity trace vanishes; infidelity is not differentiable here")]
    ZeroOverlap,

    #[error("all Jacobian columns vanish")]
    ZeroJacobian,

    #[error("interpolant s*W + (1-s)*I is singular (W has eigenvalue -1)")]
    SingularInterpolant,

    #[error("invalid Pauli word {0:?}")]
    InvalidPauliWord(String),

    #[error("invalid restriction: {0}")]
    InvalidRestriction(String),

    #[error("unsupported lattice size n = {0} (expected 3..=6)")]
    UnsupportedLattice(usize),

    #[error("unknown gate {0:?}")]
    UnknownGate(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
