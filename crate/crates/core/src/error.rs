use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the clustering pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("{path}: row {row}, column '{column}': cannot parse '{value}' as a finite number")]
    ParseCell {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },

    #[error("{path}: label column '{column}' not found in header")]
    MissingLabelColumn { path: PathBuf, column: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("neighbour count K={k} is invalid for n={n} observations (need {min} <= K <= n-1)")]
    InvalidNeighbourCount { k: usize, n: usize, min: usize },

    #[error("degenerate kernel: zero length scale at rows {rows:?}")]
    DegenerateKernel { rows: Vec<usize> },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("kernel index {index} out of range for {n} components")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("non-finite gradient for replica {index} at iteration {iteration}")]
    NonFiniteGradient { index: usize, iteration: usize },

    #[error("the probabilistic layer requires normalized kernels; the global-sigma kernel is unnormalized")]
    UnnormalizedKernel,

    #[error("cluster {0} has no members")]
    EmptyCluster(usize),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("series is constant; correlation undefined")]
    ConstantSeries,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
