use thiserror::Error;

use crate::lora::LoraAdapter;
use crate::model::VelocityField;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Last finite parameters of a run that hit a non-finite loss or state.
#[derive(Debug, Clone)]
pub enum Snapshot {
    Teacher(VelocityField),
    Adapter(LoraAdapter),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("conditioning error: {0}")]
    Condition(String),

    #[error("adapter incompatible with base model: {0}")]
    AdapterCompat(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value at step {step}: {detail}")]
    NumericalAbort {
        step: usize,
        detail: String,
        snapshot: Option<Box<Snapshot>>,
    },

    #[error(transparent)]
    Load(#[from] LoadError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Dimension { op, left, right }
    }
}

/// Checkpoint loading failures, one variant per validation stage.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("tensor shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint schema error: {0}")]
    Schema(String),

    #[error("wrong checkpoint kind: expected {expected}, found {found}")]
    Kind { expected: String, found: String },
}
