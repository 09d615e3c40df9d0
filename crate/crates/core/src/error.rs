use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("duplicate sample id {0:?}")]
    DuplicateSampleId(String),
    #[error("unknown task token {0:?}")]
    UnknownTask(String),
    #[error("unknown state token {0:?}")]
    UnknownState(String),
    #[error("unknown gender token {0:?}")]
    UnknownGender(String),

    #[error("bad magic bytes: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("malformed feature file: {0}")]
    MalformedFeatures(String),

    #[error("empty matrix")]
    EmptyMatrix,
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("invalid component count k={k} (allowed 1..={max})")]
    BadK { k: usize, max: usize },

    #[error("training data contains a single class")]
    SingleClass,
    #[error("invalid hyperparameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("empty sequence in batch at position {0}")]
    EmptySequence(usize),
    #[error("step {step} outside schedule range 0..={total}")]
    StepOutOfRange { step: usize, total: usize },

    #[error("need at least {needed} speakers, got {got}")]
    TooFewSpeakers { needed: usize, got: usize },
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("empty prediction set")]
    Empty,
    #[error("speaker leakage detected: {0}")]
    Leakage(String),
    #[error("seed {seed}, outer fold {fold}: {source}")]
    Fold {
        seed: u64,
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}
