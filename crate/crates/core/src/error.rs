use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),

    #[error("pair ({speaker}, {emotion}) out of range for {speakers} speakers x {emotions} emotions")]
    PairOutOfRange {
        speaker: usize,
        emotion: usize,
        speakers: usize,
        emotions: usize,
    },

    #[error("unknown {kind} `{id}`; valid identifiers: {valid}")]
    UnknownIdentifier {
        kind: &'static str,
        id: String,
        valid: String,
    },

    #[error("invalid corpus settings: {0}")]
    InvalidCorpus(String),

    #[error("no reference utterance for speaker {speaker}, emotion {emotion}")]
    MissingReference { speaker: usize, emotion: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss `{name}` at step {step}")]
    NonFinite { name: String, step: u64 },

    #[error("checkpoint catalog {found} does not match {expected}")]
    CatalogMismatch { expected: String, found: String },

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("evaluation gate failed: {0}")]
    Gate(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }
}
