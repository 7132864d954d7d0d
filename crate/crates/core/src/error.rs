//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Geometry puts an evaluation point on top of a scatterer (A -> 0) or
    /// otherwise outside the model's domain.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// Adaptive quadrature stopped refining before reaching the requested
    /// tolerance; `achieved` is the last error estimate relative to the
    /// kernel amplitude scale.
    #[error("quadrature did not converge: achieved {achieved:.3e}, requested {requested:.3e}")]
    QuadratureNotConverged { achieved: f64, requested: f64 },

    /// Two operands that must share a dimension do not.
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    /// A matrix required to be positive semidefinite is indefinite beyond the
    /// numerical floor.
    #[error("matrix indefinite beyond tolerance: {0}")]
    Indefinite(String),

    /// A dense factorization or eigensolver failed to converge.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed file contents (scene JSON, matrix CSV/binary, ray tables).
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
