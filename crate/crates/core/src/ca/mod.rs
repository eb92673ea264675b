//! Correspondence analysis on sparse binary follow matrices.

mod matrix;
mod model;
mod operator;
mod svd;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use matrix::{build_matrix, Axis, LabeledMatrix, SparseBinaryMatrix};
pub use model::{
    sidecar_path, Anchor, CaModel, FitMeta, LenientProjection, Orientation, ProfileProjector, Projection,
    DEGENERATE_INERTIA, RANK_EPS,
};
pub use operator::ResidualOperator;
pub use svd::{truncated_svd, SvdParams, TruncatedSvd};

#[derive(Debug, Error)]
pub enum CaError {
    #[error("{axis:?} {index} ({}) has no entries", id.as_deref().unwrap_or("?"))]
    ZeroMarginal {
        axis: Axis,
        index: usize,
        id: Option<String>,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("k_dims = {k} outside 1..={max}")]
    InvalidRank { k: usize, max: usize },
    #[error("residual matrix is numerically zero (total inertia {total_inertia:e})")]
    DegenerateMatrix { total_inertia: f64 },
    #[error("SVD did not converge after {iterations} iterations (residual {max_residual:e}, tolerance {tolerance:e})")]
    ConvergenceFailure {
        iterations: usize,
        max_residual: f64,
        tolerance: f64,
    },
    #[error("point {point} shares no entries with the model")]
    EmptySupport { point: usize },
    #[error("unknown anchor id `{0}`")]
    UnknownAnchor(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad model file: {0}")]
    Format(String),
}

impl CaError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CaError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CaError>;

/// Users are matrix rows, brands are matrix columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    User,
    Brand,
}

impl EntityKind {
    pub fn axis(self) -> Axis {
        match self {
            EntityKind::User => Axis::Row,
            EntityKind::Brand => Axis::Col,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::User => "user",
            EntityKind::Brand => "brand",
        }
    }
}
