use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("topology error: {0}")]
    Topology(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("degenerate triangle {triangle}: corner angle {angle:e} rad")]
    DegenerateTriangle { triangle: usize, angle: f64 },

    #[error("mesh has no boundary")]
    NoBoundary,

    #[error("geodesic ball around vertex {center} with radius {radius} contains only its center")]
    EmptyBall { center: usize, radius: f64 },

    #[error("eigensolver did not converge after {iterations} iterations (worst residual {worst_residual:e})")]
    NoConvergence { iterations: usize, worst_residual: f64 },

    #[error("renormalized eigenvalue {index} is degenerate ({value:e})")]
    DegenerateEigenvalue { index: usize, value: f64 },

    #[error("eigenvalue cluster of dimension {dim} exceeds the configured maximum {max}")]
    ClusterTooLarge { dim: usize, max: usize },

    #[error("linear program failed: {0}")]
    LpFailure(String),

    #[error("finite-difference step underflow: no admissible step keeps the factor positive")]
    StepUnderflow,

    #[error("path endpoint {which} is not critical (pseudo-norm {pseudo_norm:e})")]
    EndpointNotCritical { which: &'static str, pseudo_norm: f64 },

    #[error("sphere-map normalization failed: {0}")]
    NormalizationFailure(String),

    #[error("ball around vertex {center} with radius {radius} has {interior} free vertices (need at least 4)")]
    BallTooSmall { center: usize, radius: f64, interior: usize },

    #[error("functional is not monotone: {0}")]
    NotMonotone(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidInput(_) | Error::NotMonotone(_) => 1,
            Error::Io { .. } | Error::Parse { .. } | Error::Topology(_) => 3,
            _ => 2,
        }
    }
}
