//! Error type shared across the crate.

use thiserror::Error;

/// Errors surfaced by environment construction, operators and solvers.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A generator or field specification is malformed.
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    /// Lattice geometry outside the supported range.
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    /// Assembly produced a negative jump rate under the `reject` policy.
    #[error("negative jump rate {rate:.6e} at site {site} (policy: reject)")]
    NegativeRate { site: usize, rate: f64 },

    /// An operator that needs a zero-mean input received one with mean `mean`.
    #[error("operator {op} requires a zero-mean field, got mean {mean:.3e}")]
    NonZeroMean { op: &'static str, mean: f64 },

    /// Dense linear algebra requested on too large a lattice.
    #[error("geometry too large for dense mode: {sites} sites > {limit}")]
    GeometryTooLarge { sites: usize, limit: usize },

    /// Iterative solver failed to reach the requested tolerance.
    #[error("solver did not converge: residual {residual:.3e} after {iterations} iterations (tol {tol:.3e})")]
    NonConvergence {
        residual: f64,
        iterations: usize,
        tol: f64,
    },

    /// Mismatch between a solution object and the requested evaluation.
    #[error("mismatched target: {0}")]
    MismatchedTarget(String),

    /// Precondition on an operation's inputs failed.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed JSON metadata or configuration.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Internal invariant violated; indicates a bug, not bad input.
    #[error("internal error: {0}")]
    Internal(String),
}
