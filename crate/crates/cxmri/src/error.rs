//! Error type shared across the crate.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two operands disagree on one axis. `axis` indexes into the shape of the
    /// offending operand.
    #[error("shape mismatch in {context}: axis {axis} is {got}, expected {expected}")]
    ShapeMismatch {
        context: &'static str,
        axis: usize,
        got: usize,
        expected: usize,
    },
    #[error("{context}: expected rank {expected}, got rank {got}")]
    RankMismatch {
        context: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("fft requires power-of-two sizes, got {size}")]
    NonPowerOfTwo { size: usize },
    #[error("{context}: size {size} is not divisible by {divisor}")]
    NotDivisible {
        context: &'static str,
        size: usize,
        divisor: usize,
    },
    #[error("non-finite value in {what} at flat index {index}")]
    NonFinite { what: String, index: usize },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("loss node must be a real scalar (shape [1] with zero imaginary part)")]
    LossNotScalar,
    #[error("mask spec infeasible: {0}")]
    InfeasibleMask(String),
    #[error("objective increased for {0} consecutive iterations, solver diverged")]
    Diverged(usize),
    #[error("{0} is undefined for a zero-norm target")]
    ZeroTarget(&'static str),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid container: {0}")]
    Container(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
