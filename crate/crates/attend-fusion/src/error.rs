//! Crate-wide error type and result alias.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes of the library surface.
///
/// The CLI maps these onto its exit-code contract via [`Error::exit_code`]:
/// 2 for configuration/validation errors, 3 for I/O, 4 for shape mismatches.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("rank error: expected rank {expected}, got rank {got}")]
    RankError { expected: usize, got: usize },

    #[error("non-finite input in {0}")]
    NonFiniteInput(&'static str),

    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },

    #[error("backward called without a matching forward")]
    BackwardBeforeForward,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("invalid split fraction {0}: must lie strictly between 0 and 1")]
    InvalidFraction(f64),

    #[error("label {label} out of range for vocabulary of size {vocab}")]
    LabelOutOfRange { label: u32, vocab: usize },

    #[error("evaluation set is empty")]
    EmptyEvaluationSet,

    #[error("evaluation set contains no positive labels")]
    NoPositives,

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("version mismatch: expected {expected}, got {got}")]
    VersionMismatch { expected: u16, got: u16 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Exit code for the CLI: 2 config/validation, 3 I/O, 4 shape mismatch.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ShapeMismatch(_) | Error::RankError { .. } => 4,
            Error::Io(_) | Error::CorruptFile(_) => 3,
            _ => 2,
        }
    }
}
