use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("index ({i}, {j}) outside a {d1}x{d2} Hankel matrix")]
    IndexOutOfRange { i: usize, j: usize, d1: usize, d2: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("rank {rank} exceeds the admissible bound {bound}")]
    RankTooLarge { rank: usize, bound: usize },
    #[error("rank deficient: {0}")]
    RankDeficient(String),
    #[error("operator is not positive definite (curvature {0:e})")]
    NotPositiveDefinite(f64),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("dense fallback refused: dimension {dim} exceeds guard {guard}")]
    TooLarge { dim: usize, guard: usize },
    #[error("eigenvalue iteration did not converge")]
    NoConvergence,
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Failures of the numerics on valid input, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient(_) | Error::NotPositiveDefinite(_) | Error::NonFinite(_) | Error::NoConvergence
        )
    }
}
