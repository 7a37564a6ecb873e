use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed header, CSV structure or JSON document.
    #[error("parse error: {0}")]
    Parse(String),

    /// Raw voxel payload does not match the header geometry.
    #[error("size mismatch: expected {expected} bytes, found {found}")]
    Size { expected: usize, found: usize },

    /// Well-formed input carrying unusable values (NaN voxels, bad coordinates, duplicates).
    #[error("data error{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Data { row: Option<usize>, message: String },

    #[error("invalid cost matrix entry at ({row}, {col})")]
    InvalidCost { row: usize, col: usize },

    #[error("mask is empty after thresholding at {threshold}")]
    EmptyMask { threshold: f64 },

    #[error("only {valid} samples overlap the moving volume (need at least {required})")]
    InsufficientOverlap { valid: usize, required: usize },

    #[error("{which} volume has zero intensity range")]
    InsufficientRange { which: &'static str },

    #[error("optimizer diverged: metric became non-finite at level {level}, iteration {iteration}")]
    Diverged { level: usize, iteration: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid phantom spec: {0}")]
    Spec(String),

    #[error("annotation {0} is not present in the truth set")]
    InputMismatch(String),

    #[error("focus point ({x:.2}, {y:.2}, {z:.2}) lies outside every volume")]
    OutOfBounds { x: f64, y: f64, z: f64 },

    #[error("invalid input: {0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn data(row: Option<usize>, message: impl Into<String>) -> Self {
        Error::Data {
            row,
            message: message.into(),
        }
    }
}
