use std::path::PathBuf;

/// Errors produced while loading, building, or searching an index.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("document offsets are not monotone at document {doc}")]
    NonMonotoneOffsets { doc: usize },

    #[error("empty document {doc}")]
    EmptyDocument { doc: usize },

    #[error("NaN value in token {token}")]
    NanValue { token: usize },

    #[error("token {token} has norm {norm}, expected 1 within {tolerance}")]
    NormViolation {
        token: usize,
        norm: f32,
        tolerance: f32,
    },

    #[error("query {query} has {n_tokens} tokens (allowed 1..={max})")]
    QueryLength {
        query: usize,
        n_tokens: usize,
        max: usize,
    },

    #[error("qrels line {line}: {reason}")]
    Qrels { line: usize, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid search parameters: {0}")]
    InvalidParams(String),

    #[error("requested {k} centroids but the training sample has only {n} vectors")]
    TooFewSamples { k: usize, n: usize },

    #[error("degenerate residual sample: quantile boundaries are not strictly ascending")]
    DegenerateSample,

    #[error("codes length mismatch: expected {expected} bytes, found {found}")]
    CodesLengthMismatch { expected: usize, found: usize },

    #[error("corrupted index: {0}")]
    CorruptedIndex(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error(
        "inconsistent stride coverage: [{left_lo}, {left_hi}] followed by [{right_lo}, {right_hi}]"
    )]
    InconsistentCoverage {
        left_lo: usize,
        left_hi: usize,
        right_lo: usize,
        right_hi: usize,
    },

    #[error("no judged queries in common between results and qrels")]
    NoJudgedQueries,

    #[error("metadata error: {0}")]
    Metadata(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
