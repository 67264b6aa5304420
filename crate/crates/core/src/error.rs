use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate doc_id {doc_id:?} on line {line} (first seen on line {first_line})")]
    DuplicateDocId {
        doc_id: String,
        line: usize,
        first_line: usize,
    },

    #[error("unknown gold document for queries: {}", query_ids.join(", "))]
    UnresolvedGold { query_ids: Vec<String> },

    #[error("unknown doc_id {0:?}")]
    UnknownDocId(String),

    #[error("docids {first:?} and {second:?} normalize to the same token sequence")]
    DocidCollision { first: String, second: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("beam search finished without any completed hypothesis")]
    NoCompletedHypothesis,
}

impl Error {
    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
