//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty dataset: {path}")]
    EmptyDataset { path: PathBuf },

    #[error("empty record list")]
    EmptyInput,

    #[error("duplicate passage id {id:?}")]
    DuplicatePassage { id: String },

    #[error("empty corpus: at least one indexed passage is required")]
    EmptyCorpus,

    #[error("unknown passage id {id:?}")]
    UnknownPassage { id: String },

    #[error("index file {path}: expected version {expected}, found {found}")]
    IndexVersion {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("index file {path}: checksum mismatch (file is corrupt or truncated)")]
    IndexChecksum { path: PathBuf },

    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),

    #[error("backend failure{}: {message}", question_context(.question_id))]
    Backend {
        question_id: Option<String>,
        message: String,
    },

    #[error("record {id:?} has no popularity score")]
    MissingPopularity { id: String },

    #[error("no correctness entry for record {id:?}")]
    MissingCorrectness { id: String },

    #[error("record {id:?} has no gold passage")]
    MissingPassage { id: String },

    #[error("invalid configuration: {0}")]
    Config(String),
}

fn question_context(id: &Option<String>) -> String {
    match id {
        Some(id) => format!(" for question {id:?}"),
        None => String::new(),
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn malformed(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::MalformedLine {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub fn backend(question_id: Option<String>, message: impl Into<String>) -> Self {
        Error::Backend {
            question_id,
            message: message.into(),
        }
    }
}
