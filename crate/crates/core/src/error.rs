use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("graph too large for enumeration: {edges} edges (limit {limit})")]
    TooLarge { edges: usize, limit: usize },

    #[error("graph contains a cycle; acyclic objective is undefined")]
    NotAcyclic,

    #[error("similarity matrix has a zero row sum at row {0}")]
    DegenerateSimilarity(usize),

    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("ambiguous integer rounding of determinant {0}")]
    AmbiguousRounding(f64),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
