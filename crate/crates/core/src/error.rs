use thiserror::Error;

use crate::mesh::ValidationReport;
use crate::Point3;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    Validation(ValidationReport),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("query error: {0}")]
    Query(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate constraints: rank {rank} < 4, deficient directions {directions:?}")]
    DegenerateConstraints {
        rank: usize,
        /// Right singular vectors (in `[x, y, z, 1]` coordinates) with
        /// vanishing singular values.
        directions: Vec<[f64; 4]>,
    },

    #[error("correspondence error: {0}")]
    Correspondence(String),

    #[error("optimization diverged in {stage} stage at iteration {iteration}")]
    Divergence {
        stage: String,
        iteration: usize,
        last_finite: Vec<Point3>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
