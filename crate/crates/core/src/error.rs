use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("alpha must be positive, got {0}")]
    InvalidAlpha(f64),

    #[error("edge budget factor k must be at least 1, got {0}")]
    InvalidK(usize),

    #[error("keep fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),

    #[error("logical index {index} out of range for {classes} classes")]
    InvalidIndex { index: usize, classes: usize },

    #[error("class prior must be positive, got {0}")]
    InvalidPrior(f64),

    #[error("empty batch")]
    EmptyBatch,

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("patch features requested but no image was supplied")]
    MissingImage,

    #[error("ground-truth cell {0} has no logical location")]
    MissingLabels(u32),

    #[error("cells {a} and {b} claim the same grid slot (row {row}, col {col})")]
    OverlapConflict { a: u32, b: u32, row: usize, col: usize },

    #[error("cell {0} has a start index after its end index")]
    InvertedInterval(u32),

    #[error("geometry error: {0}")]
    GeometryError(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), message: message.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
