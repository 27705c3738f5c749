//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),

    /// The anisotropic scaling divisor must exceed 1, otherwise `cos 4θ = ±1`
    /// collapses one eigenvalue to zero.
    #[error("invalid square-like policy: delta must be > 1 (got {delta})")]
    InvalidPolicy { delta: f64 },

    #[error("invalid gaussian: {0}")]
    InvalidGaussian(String),

    #[error("singular covariance: determinant {det:e} is at or below the floor {floor:e}")]
    SingularCovariance { det: f64, floor: f64 },

    #[error("line {line}: malformed annotation line: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("line {line}: non-numeric coordinate {token:?}")]
    NonNumericCoordinate { line: usize, token: String },

    #[error("degenerate quad: convex hull area {area:e} is below tolerance")]
    DegenerateQuad { area: f64 },

    #[error("not enough samples for category {category:?}: got {count}, need at least 2")]
    InsufficientData { category: String, count: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
