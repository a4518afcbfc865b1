use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("trajectory `{id}` has no decisive-error label")]
    Unlabeled { id: String },

    #[error("trajectory `{id}` has no step scores; supply scores before running an algorithm")]
    MissingScores { id: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("interval [{lo}, {hi}] is out of bounds for a trajectory of length {len}")]
    OutOfBounds { lo: usize, hi: usize, len: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("target AUROC {target} unattainable: best reachable {reached:.4} after {iterations} iterations")]
    Unattainable {
        target: f64,
        reached: f64,
        iterations: usize,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
