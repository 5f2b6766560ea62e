use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("{source_name}:{line}: malformed line: {reason}")]
    MalformedLine {
        source_name: String,
        line: usize,
        reason: String,
    },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("overlapping interaction across splits: user {user} item {item}")]
    OverlappingInteraction { user: String, item: String },

    #[error("item {0} appears in interactions but has no title")]
    MissingTitle(String),

    #[error("item {0} has an empty title")]
    EmptyTitle(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("not an embedding file")]
    NotEmbeddingFile,

    #[error("unsupported embedding file version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated embedding file: expected {expected} bytes of payload, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("inconsistent embedding dimension: expected {expected}, found {found}")]
    InconsistentEmbeddingDim { expected: usize, found: usize },

    #[error("embedding endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },

    #[error("embedding request failed after {attempts} attempts: {message}")]
    Network { attempts: u32, message: String },

    #[error("malformed embedding response: {0}")]
    BadResponse(String),

    #[error("no API key: set TEXTGCN_EMBED_API_KEY")]
    MissingApiKey,

    #[error("user {0} has no training interactions")]
    ZeroDegreeUser(usize),

    #[error("no negatives available for user {0}")]
    NoNegatives(usize),

    #[error("zero-norm {what} embedding at row {row}")]
    ZeroNorm { what: &'static str, row: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("no evaluable users")]
    NoEvaluableUsers,

    #[error("checkpoint dimension mismatch: expected input dim {expected}, found {found}")]
    CheckpointDimMismatch { expected: usize, found: usize },

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown {kind} id {id}")]
    UnknownId { kind: &'static str, id: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.into())
        } else {
            Error::Io {
                path: path.into(),
                source,
            }
        }
    }

    /// True when the failure was caused by the caller's inputs (bad files,
    /// bad flags, missing credentials) rather than by the engine itself.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::NonFinite(_) | Error::Io { .. })
    }
}
