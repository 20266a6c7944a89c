use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed capture header: {0}")]
    MalformedCapture(String),

    #[error("nanosecond-resolution captures are not supported")]
    NanosecondCapture,

    #[error("unsupported link type {0} (only Ethernet, link type 1, is supported)")]
    UnsupportedLinkType(u32),

    #[error("flow csv row {row}: {message}")]
    FlowCsv { row: usize, message: String },

    #[error("feature csv row {row}: {message}")]
    FeatureCsv { row: usize, message: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("schema mismatch: expected {expected:?}, got {actual:?}")]
    SchemaMismatch { expected: String, actual: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("index is empty")]
    EmptyIndex,

    #[error("duplicate entry id {0}")]
    DuplicateId(u64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("need at least two classes, found {0}")]
    TooFewClasses(usize),

    #[error("class {0:?} is not present in the data")]
    ClassAbsent(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("unsupported snapshot version {found} (expected {expected})")]
    SnapshotVersion { expected: u32, found: u32 },

    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
