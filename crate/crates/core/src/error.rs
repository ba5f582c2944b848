use std::path::PathBuf;

use crate::embed::Modality;

/// Every failure the library can report.
#[derive(Debug, thiserror::Error)]
pub enum PauError {
    #[error("row {row} has near-zero norm and cannot be normalized")]
    ZeroVector { row: usize },
    #[error("embedding dimension {0} is too small (need at least 2)")]
    DimensionTooSmall(usize),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("modality mismatch: expected {expected}, found {found}")]
    ModalityMismatch { expected: Modality, found: Modality },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("matrix or vector is empty")]
    Empty,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("negative or non-finite evidence {value} at index {index}")]
    NegativeEvidence { index: usize, value: f64 },
    #[error("prototype {row} has near-zero norm")]
    ZeroPrototype { row: usize },
    #[error("need at least 2 pairs to train, got {0}")]
    InsufficientPairs(usize),
    #[error("training produced a non-finite prototype entry at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("rerank grid is empty or lacks 0")]
    EmptyGrid,
    #[error("{modality} index {index} has no positive pair")]
    MissingPositive { modality: Modality, index: usize },
    #[error("pair ({0}, {1}) appears more than once")]
    DuplicatePair(usize, usize),
    #[error("{modality} index {index} out of range (size {size})")]
    IndexOutOfRange { modality: Modality, index: usize, size: usize },
    #[error("both inputs need nonzero variance")]
    ZeroVariance,
    #[error("need at least {needed} values, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("cannot remove {removed} of {total} pairs")]
    TooManyRemoved { removed: usize, total: usize },
    #[error("not a probability distribution: {0}")]
    NotADistribution(String),
    #[error("invalid counts: {0}")]
    InvalidCounts(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("bad magic bytes, expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("file truncated: need {needed} bytes, have {available}")]
    TruncatedFile { needed: usize, available: usize },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("i/o error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, PauError>;

impl PauError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PauError::Io {
            path: path.into(),
            source,
        }
    }
}
