//! Memory-efficient orthogonal fine-tuning (MOFT) at desk scale.
//!
//! MOFT adapts a frozen weight matrix `W_pre` by rotating its principal
//! subspace: `W_pre` is split via SVD into an orthonormal basis `A`, principal
//! components `B`, and a frozen residual `W_res`, and the trainable update is
//! an orthogonal matrix `R = (I − Q)(I + Q)⁻¹` generated from a skew-symmetric
//! `Q` by the Cayley transform, optionally flanked by per-dimension scaling
//! vectors `α` and `β`:
//!
//! ```text
//! W = A · diag(α) · R · diag(β) · B + W_res
//! ```
//!
//! Because `R` is orthogonal and `A` orthonormal, the pairwise angles between
//! the adapted principal columns are preserved exactly — the geometric
//! invariant this crate exists to maintain and to verify.
//!
//! The crate is organized as:
//!
//! - [`matrix`] — dense row-major `f64` matrices with deterministic arithmetic;
//! - [`svd`] — one-sided Jacobi SVD and a seeded randomized SVD;
//! - [`tensor_io`] — the little-endian `MTB1` tensor file format;
//! - [`subspace`] — principal/residual decomposition and full-space embedding;
//! - [`cayley`] — the Cayley parameterization with an analytic backward pass;
//! - [`adapter`] — the trainable MOFT layer, merging, and parameter counts;
//! - [`baselines`] — minimal LoRA / LoRA-XS comparators;
//! - [`checkpoint`] — single-file adapter checkpoints;
//! - [`geometry`] — hyperspherical energy and angle-preservation reports;
//! - [`budget`] — closed-form activation-memory estimates per method;
//! - [`task`] / [`trainer`] — planted-transform tasks and a deterministic
//!   SGD loop with finite-difference gradient checking.
//!
//! Everything is deterministic: fixed summation order, seeded ChaCha RNG, and
//! no internal parallelism, so repeated runs produce bit-identical results.

pub mod adapter;
pub mod baselines;
pub mod budget;
pub mod cayley;
pub mod checkpoint;
pub mod error;
pub mod geometry;
pub mod matrix;
mod solve;
pub mod subspace;
pub mod svd;
pub mod task;
pub mod tensor_io;
pub mod trainer;

pub use adapter::MoftAdapter;
pub use cayley::CayleyParams;
pub use error::{MoftError, Result};
pub use matrix::DenseMatrix;
pub use subspace::{SubspaceDecomposition, SvdMode, Variant};
pub use svd::SvdResult;
