use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: dimension mismatch in {field}: expected {expected}, got {got}")]
    DimensionMismatch {
        line: usize,
        field: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: dangling sample_id {id:?}")]
    DanglingSampleId { line: usize, id: String },
    #[error("line {line}: zero-norm {field} vector for {id:?}")]
    ZeroNorm {
        line: usize,
        field: &'static str,
        id: String,
    },
    #[error("empty knowledge base")]
    EmptyKnowledgeBase,
    #[error("vector length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("query dimensions (d_v={query_v}, d_t={query_t}) do not match knowledge base (d_v={kb_v}, d_t={kb_t})")]
    QueryDimension {
        query_v: usize,
        query_t: usize,
        kb_v: usize,
        kb_t: usize,
    },
    #[error("fewer than 2 candidates ({0}) to build a graph")]
    TooFewCandidates(usize),
    #[error("graph node sets differ between modalities")]
    NodeSetMismatch,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown sample id {0:?}")]
    UnknownId(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("sample {0:?} has no image reference")]
    MissingImageRef(String),
    #[error("oracle failed: {0}")]
    Oracle(String),
    #[error("endpoint failure after {completed} queries (partial trace: {trace}): {reason}")]
    EndpointAborted {
        completed: usize,
        trace: String,
        reason: String,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
