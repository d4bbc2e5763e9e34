use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("symbol {symbol:?} not in declared alphabet (line {line})")]
    UnknownSymbol { symbol: char, line: usize },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("grammar: {0}")]
    Grammar(String),

    #[error("sampling retries exhausted: no derivation of length <= {max_len} in {retries} attempts")]
    SampleRetriesExhausted { max_len: usize, retries: usize },

    #[error("hypothesis {hyp_id}: {message}")]
    Hypothesis { hyp_id: String, message: String },

    #[error("unknown unit id {unit} (model has {n_units} units)")]
    UnknownUnit { unit: u32, n_units: u32 },

    #[error("record range {start}..{end} outside stored file with {available} records")]
    RecordRangeOutOfBounds { start: usize, end: usize, available: usize },

    #[error("blocks misaligned: {0}")]
    Misaligned(String),

    #[error("hypothesis {hyp_id} is not binary but was routed to a classifier measure")]
    NonBinaryHypothesis { hyp_id: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("duplicate id: {0}")]
    DuplicateId(String),

    #[error("query error at {line}:{col}: {message}")]
    Query { line: usize, col: usize, message: String },

    #[error("catalog: {0}")]
    Catalog(String),

    #[error("verification: {0}")]
    Verify(String),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn query(line: usize, col: usize, message: impl Into<String>) -> Self {
        Error::Query { line, col, message: message.into() }
    }
}
