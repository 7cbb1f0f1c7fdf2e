use thiserror::Error;

/// Errors produced by the correspondence pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("topology error: {0}")]
    Topology(String),

    #[error("hierarchy level {level} collapsed to {points} points (need at least 4)")]
    Hierarchy { level: usize, points: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular system for row {row}: {message}")]
    SingularRow { row: usize, message: String },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("eigensolver did not converge within {budget} iterations")]
    EigensolverNonConvergence { budget: usize },

    #[error("numerical error: {0}")]
    Numeric(String),

    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
