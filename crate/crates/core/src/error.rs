use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum NormError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("cell {cell} is degenerate (measure {measure:e})")]
    DegenerateCell { cell: usize, measure: f64 },
    #[error("cell {cell} references vertex {index} but the mesh has {n_vertices} vertices")]
    IndexOutOfRange {
        cell: usize,
        index: usize,
        n_vertices: usize,
    },
    #[error("unsupported cell kind: {0}")]
    UnsupportedCellKind(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("eigensolver did not converge: {0}")]
    ConvergenceFailure(String),
    #[error("matrix is rank deficient: {0}")]
    RankDeficient(String),
    #[error("too few snapshots: need at least {needed}, got {got}")]
    TooFewSnapshots { needed: usize, got: usize },
    #[error("invalid mode count: {0}")]
    InvalidModeCount(String),
    #[error("eigenvalue lambda_{index} is numerically zero ({value:e})")]
    ZeroEigenvalue { index: usize, value: f64 },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("target has zero norm")]
    ZeroTarget,
    #[error("empty batch")]
    EmptyBatch,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss at sample {sample} (epoch {epoch})")]
    NonFiniteLoss { sample: usize, epoch: usize },
    #[error("coefficient is not positive at node {node} ({value})")]
    NonPositiveCoefficient { node: usize, value: f64 },
    #[error("linear system is singular or not positive definite: {0}")]
    SingularSystem(String),
    #[error("no boundary nodes found: {0}")]
    BoundaryNotFound(String),
    #[error("invalid file format: {0}")]
    Format(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = NormError> = std::result::Result<T, E>;

impl NormError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NormError::Io {
            path: path.into(),
            source,
        }
    }
}
