use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("no numeric feature columns in {0}")]
    NoNumericColumns(String),

    #[error("only {rows} usable rows after cleaning, need at least {required}")]
    EmptyAfterCleaning { rows: usize, required: usize },

    #[error("feature count mismatch: expected {expected}, found {found}")]
    FeatureCountMismatch { expected: usize, found: usize },

    #[error("series of length {len} is shorter than window length {window}")]
    SeriesTooShort { len: usize, window: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite activation in {0}")]
    NonFiniteActivation(&'static str),

    #[error("sequence length {len} is not divisible by patch length {patch}")]
    IndivisibleLength { len: usize, patch: usize },

    #[error("width {dim} is not divisible by {heads} attention heads")]
    HeadDivisibility { dim: usize, heads: usize },

    #[error("moving-average window {window} must be odd and within 1..={len}")]
    BadWindow { window: usize, len: usize },

    #[error("teacher-forced reconstruction requires a target sequence")]
    MissingTarget,

    #[error("autoregressive reconstruction does not accept a target sequence")]
    UnexpectedTarget,

    #[error("non-finite logit")]
    NonFiniteLogit,

    #[error("training diverged in phase {phase} at epoch {epoch}")]
    DivergenceDetected { phase: u8, epoch: usize },

    #[error("training phase {requested} requested after {completed} completed phases")]
    PhaseOrder { requested: u8, completed: u8 },

    #[error("checkpoint has not completed training")]
    UntrainedCheckpoint,

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),

    #[error("invalid configuration field `{field}`: {reason}")]
    ConfigInvalid { field: &'static str, reason: String },

    #[error("insufficient data: need at least {need} windows, have {have}")]
    InsufficientData { need: usize, have: usize },

    #[error("{0}")]
    Format(String),
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::ConfigInvalid {
            field,
            reason: reason.into(),
        }
    }
}
