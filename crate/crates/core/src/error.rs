use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("point cloud contains no points")]
    EmptyCloud,

    #[error("point cloud is degenerate: {0}")]
    DegenerateCloud(String),

    #[error("unsupported file format: {0}")]
    UnsupportedFormat(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("precision matrix is not positive definite")]
    SingularPrecision,

    #[error("node {node} has fewer than two candidate neighbors of the other color")]
    TooFewBlueNeighbors { node: usize },

    #[error("points are collinear; the normal is undefined")]
    CollinearPoints,

    #[error("Lanczos iteration broke down at step {step}")]
    Breakdown { step: usize },

    #[error("step size {step} exceeds 1/L = {max}")]
    StepTooLarge { step: f64, max: f64 },

    #[error("no flat patches found")]
    NoFlatPatches,

    #[error("normal models are degenerate (sum of tr(A^T A) = {0:e})")]
    DegenerateModels(f64),

    #[error("matrix has (numerically) zero norm")]
    ZeroMatrix,

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
