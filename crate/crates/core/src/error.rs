use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the geometry, model, training and data layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {got}: {reason}")]
    InvalidDimension { got: usize, reason: &'static str },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("vertex index {index} out of range for a simplex with {count} vertices")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("zero-norm vector where a direction is required")]
    ZeroNorm,

    #[error("degenerate sphere: the center components are all (numerically) zero")]
    DegenerateSphere,

    #[error("matrix is not orthogonal (residual {residual:e})")]
    NotOrthogonal { residual: f64 },

    #[error("non-linear normalization denominator {denominator:e} is too small")]
    DegenerateNormalization { denominator: f64 },

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),

    #[error("parameter set does not match the model: {0}")]
    ParamMismatch(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
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

pub type Result<T, E = Error> = std::result::Result<T, E>;
