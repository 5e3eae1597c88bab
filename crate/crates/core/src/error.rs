use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("fields live on different function spaces")]
    SpaceMismatch,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("zero quadrature weight with nonzero dual coefficient at node {node}")]
    SingularRiesz { node: usize },

    #[error("basis is not orthonormal (max Gram deviation {max_deviation:.3e}); orthonormalize first")]
    NotOrthonormal { max_deviation: f64 },

    #[error("all input fields are zero; the spanned subspace is empty")]
    EmptySubspace,

    #[error("covariance decay {decay} is not trace class (requires decay > 1)")]
    NonTraceClass { decay: f64 },

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("functional failed at sample {index} (input saved to {path:?}): {source}")]
    SampleFailure {
        index: usize,
        path: Option<PathBuf>,
        #[source]
        source: Box<Error>,
    },

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("reduced coordinates are degenerate (zero variance in coordinate {axis})")]
    DegenerateCoordinates { axis: usize },

    #[error("requested {requested} directions but the estimate only retains {available}")]
    RankTooSmall { requested: usize, available: usize },

    #[error("unit-norm direction required (norm {norm})")]
    NotUnit { norm: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
