use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid camera `{id}`: {reason}")]
    InvalidCamera { id: String, reason: String },

    #[error("point is behind camera `{camera}` (depth {depth:.3e})")]
    PointBehindCamera { camera: String, depth: f64 },

    #[error("para-perspective anchor too close to camera `{camera}` (range {range:.3e})")]
    DegenerateAnchor { camera: String, range: f64 },

    #[error("scale matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("affine map is rank deficient: pushed-forward scale is not positive definite")]
    RankDeficientMap,

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("need at least {needed} views, got {got}")]
    InsufficientViews { needed: usize, got: usize },

    #[error("too many views for triangulation: {0} (max {max})", max = crate::triangulation::MAX_VIEWS)]
    TooManyViews(usize),

    #[error("triangulated point is at infinity (|w| = {0:.3e})")]
    DehomogenizationFailure(f64),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("no valid observations")]
    NoValidObservations,

    #[error("index {index} out of range for {len} keypoints")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: unsupported schema_version {found} (expected {expected})")]
    SchemaVersionMismatch {
        path: PathBuf,
        found: i64,
        expected: i64,
    },

    #[error("{path}: integrity check failed: {message}")]
    Integrity { path: PathBuf, message: String },

    #[error("mismatched files: {0}")]
    MismatchedFiles(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
