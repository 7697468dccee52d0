use std::path::PathBuf;

/// Errors produced by ingestion, model construction and training.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate entry at line {line}: index {index:?} already present")]
    DuplicateEntry { line: usize, index: Vec<usize> },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("insufficient data: need at least {needed} entries, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("invalid window size {0}: must be odd and at least 3")]
    InvalidWindow(usize),

    #[error("empty neighborhood for time index {0}")]
    EmptyNeighborhood(usize),

    #[error("index {index:?} out of range for dims {dims:?}")]
    IndexOutOfRange { index: Vec<usize>, dims: Vec<usize> },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("cannot evaluate on an empty holdout set")]
    EmptyEvaluation,

    #[error("singular row system in mode {mode}, row {row} (lambda_r = 0)")]
    Singular { mode: usize, row: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
