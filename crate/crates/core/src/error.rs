use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, StatError>;

/// Every failure mode surfaced by the library.
#[derive(Debug, Error)]
pub enum StatError {
    #[error("empty manifest")]
    EmptyManifest,
    #[error("missing sample file: {0}")]
    MissingFile(PathBuf),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("manifest line {line}: {reason}")]
    ManifestSyntax { line: usize, reason: String },
    #[error("class {0:?} has no training samples to balance from")]
    EmptyClass(String),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("{axis} not divisible by {by}")]
    NotDivisible { axis: &'static str, by: &'static str },
    #[error("missing index {0}")]
    MissingIndex(usize),
    #[error("duplicate index {0}")]
    DuplicateIndex(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("backward called before any forward pass was recorded")]
    BackwardBeforeForward,
    #[error("parameter {0:?} registered twice")]
    DuplicateParameter(String),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("nothing masked")]
    NothingMasked,
    #[error("infeasible pair sampling: {0}")]
    InfeasiblePairs(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid label {label} for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("empty split")]
    EmptySplit,
    #[error("invalid config field {path}: {reason}")]
    Config { path: String, reason: String },
    #[error("pretraining not enabled in config")]
    PretrainingDisabled,
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl StatError {
    pub(crate) fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        StatError::Config { path: path.into(), reason: reason.into() }
    }
}
