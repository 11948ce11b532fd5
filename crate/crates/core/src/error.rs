use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: u64 },
    #[error("bad shape {0:?}")]
    BadShape(Vec<usize>),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("pool size must be at least 1, got {0}")]
    BadPoolSize(usize),
    #[error("batch normalization needs at least 2 samples in train mode, got {0}")]
    DegenerateBatch(usize),
    #[error("dropout rate {0} is outside [0, 1)")]
    BadRate(f64),
    #[error("target row {row} is not one-hot")]
    BadTarget { row: usize },
    #[error("block {block} reduces the spatial extent below 1")]
    ShapeUnderflow { block: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("line search failed after {evaluations} evaluations")]
    LineSearchFailure { evaluations: usize },
    #[error("unknown optimizer `{0}`")]
    UnknownOptimizer(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
    #[error("truncated file {path}: {len} bytes is not a multiple of the {record}-byte record")]
    TruncatedFile {
        path: PathBuf,
        len: usize,
        record: usize,
    },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("malformed PPM header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("image {path} is {actual:?}, expected {expected:?}")]
    DimensionMismatch {
        path: PathBuf,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("batch size {bs} invalid for {samples} samples")]
    BadBatchSize { bs: usize, samples: usize },
    #[error("duplicate seed {0} in multistart list")]
    DuplicateSeed(u64),
    #[error("grid axis `{0}` is empty")]
    EmptyGrid(String),
    #[error("no record for problem `{problem}` and solver `{solver}`")]
    MissingRecord { problem: String, solver: String },
    #[error("problem `{problem}` has differing initial losses across solvers")]
    InconsistentStart { problem: String },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("config parse error at line {line}, column {column}: {message}")]
    ParseError {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidValue {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
