//! Error type shared by every engine module.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    /// A write reached the store without verification or sufficient confidence.
    #[error("write rejected by verification gate: {0}")]
    Gated(String),

    #[error("persistence failure on {path}: {source}")]
    Persistence {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt record in {path} at line {line}: {reason}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("unsupported format version {found} in {path} (expected {expected})")]
    Migration {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("missing context: {0}")]
    MissingContext(String),

    /// The fresh-knowledge route failed; `rationale` explains what was tried.
    #[error("unanswerable: {rationale}")]
    Unanswerable { rationale: String },

    /// Provider transport failure; the caller may retry.
    #[error("provider transport error: {0}")]
    Transport(String),

    #[error("malformed provider output: {0}")]
    MalformedOutput(String),

    #[error("unsupported input: {0}")]
    UnsupportedInput(String),

    #[error("intent revision unavailable: {0}")]
    RevisionUnavailable(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("wrong endpoint: {0}")]
    WrongEndpoint(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// Stable machine-readable code used by the HTTP API and the C ABI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NotFound(_) => "not_found",
            Error::Conflict(_) => "conflict",
            Error::Gated(_) => "gated",
            Error::Persistence { .. } => "persistence",
            Error::Corrupt { .. } => "corrupt_record",
            Error::Migration { .. } => "migration",
            Error::MissingContext(_) => "missing_context",
            Error::Unanswerable { .. } => "unanswerable",
            Error::Transport(_) => "transport",
            Error::MalformedOutput(_) => "malformed_output",
            Error::UnsupportedInput(_) => "unsupported_input",
            Error::RevisionUnavailable(_) => "revision_unavailable",
            Error::Precondition(_) => "precondition",
            Error::WrongEndpoint(_) => "wrong_endpoint",
            Error::Config(_) => "config",
        }
    }

    pub fn is_retriable(&self) -> bool {
        matches!(self, Error::Transport(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Persistence {
            path: path.into(),
            source,
        }
    }
}
