use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sequence length {len} is not a multiple of segment length {segment}")]
    IndivisibleLength { len: usize, segment: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("line {line}: duplicate timestamp {timestamp} for subject {subject}")]
    DuplicateTimestamp {
        line: usize,
        subject: String,
        timestamp: usize,
    },

    #[error("unknown task column `{0}`")]
    UnknownTaskColumn(String),

    #[error("line {line}: class {value} out of range for task {task}")]
    OutOfRangeClass {
        line: usize,
        task: &'static str,
        value: i64,
    },

    #[error("labeled subject `{0}` has no activity sequence")]
    UnknownSubject(String),

    #[error("raw value {0} is already in the vocabulary")]
    InVocabulary(u32),

    #[error("embedding space has no symbol-level vectors")]
    NoSymbolVectors,

    #[error("infeasible correlation matrix: {0}")]
    InfeasibleCorrelation(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("all noise counts are zero")]
    AllZeroCounts,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("granularity mismatch: space is {space}, request is {request}")]
    GranularityMismatch { space: String, request: String },

    #[error("unknown segment for subject `{0}`")]
    UnknownSegment(String),

    #[error("id {id} out of range for table of {rows} rows")]
    IdOutOfRange { id: usize, rows: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("pooling window {window} larger than input length {len}")]
    WindowTooLarge { window: usize, len: usize },

    #[error("batch normalization needs at least 2 rows in train mode, got {0}")]
    BatchTooSmall(usize),

    #[error("mixture weights sum to {0}, expected 1")]
    AlphaSumViolation(f64),

    #[error("training set contains a single class ({0})")]
    SingleClassTrainingSet(usize),

    #[error("no labeled subjects for the requested tasks")]
    NoLabeledSubjects,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("header mismatch: {0}")]
    HeaderMismatch(String),

    #[error("truncated file: {0}")]
    TruncatedFile(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("content digest mismatch")]
    DigestMismatch,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by numerical breakdown rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}
