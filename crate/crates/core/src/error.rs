use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("empty set passed to {0}")]
    EmptySet(&'static str),
    #[error("undefined duplication: node {0} has no incident hyperedge")]
    UndefinedDuplication(usize),
    #[error("patients with no diagnostic feature set: {0:?}")]
    EmptyRows(Vec<String>),
    #[error("undefined cosine similarity: zero vector in {0}")]
    ZeroVector(&'static str),
    #[error("disjoint views: {0}")]
    DisjointViews(&'static str),
    #[error("augmented view lost every hyperedge after {attempts} attempts")]
    EmptyView { attempts: usize },
    #[error("degenerate task: {0}")]
    DegenerateTask(String),
    #[error("vocabulary mismatch: coverage {coverage:.4} below floor {floor:.4}")]
    VocabularyMismatch { coverage: f64, floor: f64 },
    #[error("unknown patient id {0:?}")]
    UnknownPatient(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("schema mismatch in {file}: missing {missing:?}, unexpected {unexpected:?}")]
    Schema {
        file: String,
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
