//! Cayley parameterization of the rotation group.
//!
//! A strict-upper-triangle vector `q` of length `r(r−1)/2` defines a skew
//! matrix `Q` (with `Q[i][j] = q_k`, `Q[j][i] = −q_k` for `i < j`) and the
//! Cayley transform maps it to a rotation:
//!
//! ```text
//! R = (I − Q)(I + Q)⁻¹
//! ```
//!
//! `I + Q` is always invertible for skew `Q` (its eigenvalues are `1 + iλ`),
//! and `R` lands in SO(r): orthogonal with determinant +1. The map hits the
//! whole component of SO(r) except a measure-zero set, which is plenty for
//! gradient-based training, and it uses exactly `r(r−1)/2` parameters — the
//! dimension of the group.
//!
//! The backward pass is analytic. For a loss `L` with upstream gradient
//! `G_R = ∂L/∂R`, differentiation of the transform gives
//!
//! ```text
//! M = −(I + R)ᵀ · G_R · (I − Q)⁻¹
//! ∂L/∂q_k = M[i][j] − M[j][i]      (k ↔ the pair i < j)
//! ```
//!
//! computed here with one LU solve against `I + Q = (I − Q)ᵀ`. Finite
//! differences
//! over `q` are the oracle contract: the tests require agreement to a
//! relative 1e-5 at step 1e-6.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{MoftError, Result};
use crate::matrix::{orthonormality_residual, DenseMatrix};
use crate::solve::{lu_solve, qr_solve};

/// Number of free parameters for a rank-`r` rotation.
pub fn param_len(r: usize) -> usize {
    r * (r - 1) / 2
}

// Position of pair (i, j), i < j, in the row-major strict upper triangle.
fn pair_index(i: usize, j: usize, r: usize) -> usize {
    debug_assert!(i < j && j < r);
    i * r - i * (i + 1) / 2 + (j - i - 1)
}

/// Skew-symmetric generator coordinates for a rank-`r` rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct CayleyParams {
    r: usize,
    q: Vec<f64>,
}

impl CayleyParams {
    /// Wraps a coordinate vector.
    ///
    /// # Errors
    ///
    /// `InvalidRank` if `r` is zero, `ShapeError` if the length is not
    /// `r(r−1)/2`, `InvalidInput` on non-finite entries.
    pub fn new(r: usize, q: Vec<f64>) -> Result<Self> {
        if r == 0 {
            return Err(MoftError::InvalidRank(
                "rotation rank must be at least 1".to_string(),
            ));
        }
        if q.len() != param_len(r) {
            return Err(MoftError::ShapeError(format!(
                "rank {r} needs {} parameters, got {}",
                param_len(r),
                q.len()
            )));
        }
        if let Some(bad) = q.iter().find(|x| !x.is_finite()) {
            return Err(MoftError::InvalidInput(format!(
                "non-finite parameter {bad}"
            )));
        }
        Ok(CayleyParams { r, q })
    }

    /// The identity rotation: all coordinates zero.
    pub fn identity(r: usize) -> Result<Self> {
        Self::new(r, vec![0.0; param_len(r)])
    }

    /// Standard-normal coordinates scaled by `scale`, for seeded instances.
    pub fn random(r: usize, scale: f64, rng: &mut impl Rng) -> Result<Self> {
        let q = (0..param_len(r))
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self::new(r, q)
    }

    /// Rotation rank.
    pub fn rank(&self) -> usize {
        self.r
    }

    /// Coordinate slice, row-major over the strict upper triangle.
    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// Mutable coordinates; callers must keep entries finite.
    pub fn q_mut(&mut self) -> &mut [f64] {
        &mut self.q
    }
}

/// Materializes the skew matrix `Q` from its upper-triangle coordinates.
pub fn materialize_q(params: &CayleyParams) -> DenseMatrix {
    let r = params.r;
    DenseMatrix::from_fn(r, r, |i, j| {
        if i < j {
            params.q[pair_index(i, j, r)]
        } else if i > j {
            -params.q[pair_index(j, i, r)]
        } else {
            0.0
        }
    })
}

/// Computes the rotation `R = (I − Q)(I + Q)⁻¹`.
///
/// Solved by LU with partial pivoting; the result is checked against the
/// defining identity `R(I + Q) = I − Q` with relative tolerance 1e-8, and a
/// QR least-squares solve is tried as a fallback before giving up.
///
/// # Errors
///
/// `NumericalFailure` if neither solver meets the residual bound (cannot
/// happen for finite skew input; guards against internal corruption).
pub fn cayley_forward(params: &CayleyParams) -> Result<DenseMatrix> {
    let r = params.r;
    let eye = DenseMatrix::identity(r);
    let q = materialize_q(params);
    let i_plus = eye.add(&q)?;
    let i_minus = eye.sub(&q)?;
    // R·(I+Q) = I−Q  ⇔  (I+Q)ᵀ·Rᵀ = (I−Q)ᵀ.
    let i_plus_t = i_plus.transpose();
    let i_minus_t = i_minus.transpose();
    let rot = lu_solve(&i_plus_t, &i_minus_t)?.transpose();
    if cayley_residual(&rot, &i_plus, &i_minus) <= 1e-8 {
        return Ok(rot);
    }
    let rot = qr_solve(&i_plus_t, &i_minus_t)?.transpose();
    let residual = cayley_residual(&rot, &i_plus, &i_minus);
    if residual <= 1e-8 {
        return Ok(rot);
    }
    Err(MoftError::NumericalFailure(format!(
        "Cayley solve residual {residual:e} exceeds 1e-8"
    )))
}

fn cayley_residual(rot: &DenseMatrix, i_plus: &DenseMatrix, i_minus: &DenseMatrix) -> f64 {
    let lhs = rot.matmul(i_plus).expect("square shapes agree");
    let diff = lhs.sub(i_minus).expect("square shapes agree");
    diff.frobenius_norm() / i_minus.frobenius_norm().max(1e-300)
}

/// Pulls a gradient on the rotation back to the coordinates.
///
/// Given `grad_r = ∂L/∂R` at the rotation defined by `params`, returns
/// `∂L/∂q` as a vector ordered like [`CayleyParams::q`].
///
/// # Errors
///
/// `ShapeError` if `grad_r` is not `r×r`; `NumericalFailure` from the inner
/// solve.
pub fn cayley_backward(params: &CayleyParams, grad_r: &DenseMatrix) -> Result<Vec<f64>> {
    let r = params.r;
    if grad_r.shape() != (r, r) {
        return Err(MoftError::ShapeError(format!(
            "rotation gradient must be {r}x{r}, got {}x{}",
            grad_r.rows(),
            grad_r.cols()
        )));
    }
    let eye = DenseMatrix::identity(r);
    let q = materialize_q(params);
    let i_plus = eye.add(&q)?;
    let rot = cayley_forward(params)?;
    // M = −(I+R)ᵀ·G_R·(I+Q)⁻¹, via (I+Q)ᵀ·Mᵀ = −G_Rᵀ·(I+R).
    let i_plus_r = eye.add(&rot)?;
    let rhs = grad_r.transpose().matmul(&i_plus_r)?.scale(-1.0);
    let m = lu_solve(&i_plus, &rhs)?.transpose();
    let mut grad = vec![0.0; param_len(r)];
    for i in 0..r {
        for j in (i + 1)..r {
            grad[pair_index(i, j, r)] = m.get(i, j) - m.get(j, i);
        }
    }
    Ok(grad)
}

/// Frobenius distance of `R` from orthogonality, `‖RᵀR − I‖_F`.
pub fn rotation_residual(rot: &DenseMatrix) -> f64 {
    orthonormality_residual(rot)
}
