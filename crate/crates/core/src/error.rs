//! Error type shared by every module of the crate.

use thiserror::Error;

/// Failures reported by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An iterative algorithm stopped before reaching its tolerance.
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        /// Name of the algorithm that stalled.
        what: &'static str,
        /// Iterations performed.
        iterations: usize,
        /// Largest residual norm at exit.
        residual: f64,
    },

    /// A dense factorization failed, usually because a shift was not below the spectrum.
    #[error("factorization failed: {0}")]
    Factorization(String),

    /// The requested eigenpairs exceed the dimension of the problem.
    #[error("requested {requested} eigenpairs but the basis has only {dimension} functions")]
    TooManyStates {
        /// Number of requested eigenpairs.
        requested: usize,
        /// Basis dimension.
        dimension: usize,
    },

    /// Two objects built on different meshes or masses were combined.
    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    /// A persisted file could not be decoded.
    #[error("format error: {0}")]
    Format(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Result alias for this crate.
pub type Result<T> = std::result::Result<T, Error>;
