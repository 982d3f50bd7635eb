use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate document id `{0}`")]
    DuplicateDocument(String),

    #[error("sample `{sample_id}` references unknown document `{doc_id}`")]
    UnknownNeedle { sample_id: String, doc_id: String },

    #[error("invalid sample `{sample_id}`: {reason}")]
    InvalidSample { sample_id: String, reason: String },

    #[error("unknown document `{0}`")]
    UnknownDocument(String),

    #[error("empty query")]
    EmptyQuery,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("embedding load error: {0}")]
    Embedding(String),

    #[error("duplicate document `{doc_id}` in ranked list `{strategy}`")]
    DuplicateRankedDoc { strategy: String, doc_id: String },

    #[error("invalid ranked list: {0}")]
    InvalidRanking(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty seed set")]
    EmptySeeds,

    #[error("budget too small for needle set of sample `{sample_id}`: needles need {needed} tokens, budget is {budget}")]
    BudgetTooSmall {
        sample_id: String,
        needed: usize,
        budget: usize,
    },

    #[error("tokenizer mismatch: corpus counted with `{corpus}`, active tokenizer is `{active}`")]
    TokenizerMismatch { corpus: String, active: String },

    #[error("tokenizer error: {0}")]
    Tokenizer(String),

    #[error("index format error: {0}")]
    Format(String),

    #[error("model client error: {0}")]
    Client(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
