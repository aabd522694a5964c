//! Crate-wide error type.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes, naming both operands.
    #[error("shape mismatch in {op}: left {lhs:?}, right {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A configuration violated one of its invariants.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("data error: {0}")]
    Data(String),

    /// Corrupt or malformed checkpoint bytes.
    #[error("checkpoint format error: {0}")]
    Format(String),

    /// Well-formed checkpoint of an unsupported version.
    #[error("unsupported checkpoint version {0:?}")]
    Version(char),

    /// Training aborted; `step` is the failing optimizer step.
    #[error("training failed at step {step}: {reason}")]
    Train { step: u64, reason: String },

    #[error("infeasible allocation: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code under the CLI's discipline: 2 for usage/config
    /// problems, 3 for runtime training failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Train { .. } => 3,
            _ => 2,
        }
    }
}
