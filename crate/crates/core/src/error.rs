use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("dimension mismatch: expected {expected}, found {found}{}", context_suffix(.context))]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: Option<String>,
    },

    #[error("zero vector{}", context_suffix(.0))]
    ZeroVector(Option<String>),

    #[error("non-finite coordinate{}", context_suffix(.0))]
    NonFinite(Option<String>),

    #[error("empty database")]
    EmptyDatabase,

    #[error("invalid privacy budget {0}: epsilon must be finite and >= 0")]
    InvalidEpsilon(f64),

    #[error("record `{0}` is not enrolled in the release model; use the feature-level pipeline for unseen speakers")]
    UnknownRecord(String),

    #[error("audit cap exceeded: n = {n} > cap {cap}")]
    AuditCapExceeded { n: usize, cap: usize },

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("id sets differ: {0}")]
    IdMismatch(String),

    #[error("requested n = {requested} exceeds population size {available}")]
    SampleTooLarge { requested: usize, available: usize },

    #[error("synthesizer failed on utterance `{id}`: {message}")]
    Synthesis { id: String, message: String },

    #[error("invalid model file: {0}")]
    ModelFormat(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn context_suffix(context: &Option<String>) -> String {
    match context {
        Some(c) => format!(" ({c})"),
        None => String::new(),
    }
}

impl Error {
    /// Short stable tag for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::DuplicateId(_) => "duplicate-id",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::ZeroVector(_) => "zero-vector",
            Error::NonFinite(_) => "non-finite",
            Error::EmptyDatabase => "empty-database",
            Error::InvalidEpsilon(_) => "invalid-epsilon",
            Error::UnknownRecord(_) => "unknown-record",
            Error::AuditCapExceeded { .. } => "audit-cap",
            Error::InvalidPrior(_) => "invalid-prior",
            Error::IdMismatch(_) => "id-mismatch",
            Error::SampleTooLarge { .. } => "sample-too-large",
            Error::Synthesis { .. } => "synthesis",
            Error::ModelFormat(_) => "model-format",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Io(_) => "io",
        }
    }
}
