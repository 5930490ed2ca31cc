//! Crate-wide error type.
//!
//! One enum covers every failure mode in the crate so callers match on a
//! single type. Validation problems (bad shapes, missing fields, malformed
//! files) are distinct from numerical problems (non-convergence, divergence)
//! because the command-line front end maps them to different exit codes.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, MoftError>;

/// All errors produced by this crate.
#[derive(Debug, Error)]
pub enum MoftError {
    /// Input values violate a documented precondition (non-finite entries,
    /// missing dimension fields, degenerate configuration requests).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Operands have incompatible shapes.
    #[error("shape mismatch: {0}")]
    ShapeError(String),

    /// A requested rank is zero or exceeds what the operand supports.
    #[error("invalid rank: {0}")]
    InvalidRank(String),

    /// An iterative method failed to converge or a linear solve lost too much
    /// accuracy to honor the caller-facing tolerance.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// A tensor or checkpoint file is malformed. `offset` is the byte at
    /// which the problem was detected.
    #[error("format error at byte {offset}: {reason}")]
    FormatError { offset: u64, reason: String },

    /// A matrix supplied as an orthonormal basis is not orthonormal.
    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    /// A column that must be normalizable has (near-)zero norm.
    #[error("degenerate column {index}: norm {norm:e} below threshold")]
    DegenerateColumn { index: usize, norm: f64 },

    /// A matrix supplied as a rotation is not orthogonal within tolerance.
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),

    /// Exact integer evaluation exceeded the 64-bit range.
    #[error("integer overflow in {0}")]
    Overflow(String),

    /// The training loss blew past the divergence guard.
    #[error("training diverged at step {step}: loss {loss:e} exceeds {limit:e}")]
    Diverged { step: usize, loss: f64, limit: f64 },

    /// Underlying I/O failure while reading or writing files.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
