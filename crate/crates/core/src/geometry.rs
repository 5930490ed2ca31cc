//! Hyperspherical energy and pairwise-angle structure of weight columns.
//!
//! The hyperspherical energy of `W` with unit-normalized columns `ŵᵢ` is
//!
//! ```text
//! HSE(W) = Σ_{i≠j} ‖ŵᵢ − ŵⱼ‖⁻¹        (ordered pairs)
//! ```
//!
//! a Thomson-style potential measuring how spread the column directions are.
//! It depends only on pairwise angles, so any transform that preserves the
//! angles between columns preserves the energy.
//!
//! For an adapted weight `A·R·B + W_res`, the columns of the principal part
//! are `A·R·bⱼ`; the angle between columns `i` and `j` is controlled by the
//! bilinear form `bᵢᵀ(RᵀGR)bⱼ` with `G = AᵀA`. The rotation preserves all
//! angles exactly when `RᵀGR = G`: under the MOFT split `G = I` and every
//! orthogonal `R` qualifies, while under the PISSA split `G = diag(S_r)`
//! with distinct entries and a generic rotation breaks the condition. The
//! converse needs a non-degeneracy hypothesis — some off-diagonal pairing
//! `bᵢᵀGbⱼ ≠ 0` must exist, otherwise angles can survive by accident.
//! [`check_preservation`] measures both directions and reports that margin.

use serde::Serialize;

use crate::error::{MoftError, Result};
use crate::matrix::DenseMatrix;
use crate::subspace::SubspaceDecomposition;

/// Symmetric matrix of pairwise column angles, radians in `[0, π]`.
#[derive(Debug, Clone)]
pub struct AngleMatrix {
    n: usize,
    theta: Vec<f64>,
}

impl AngleMatrix {
    /// Number of columns the angles were measured over.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Angle between columns `i` and `j`; zero on the diagonal.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.n && j < self.n, "angle index out of range");
        self.theta[i * self.n + j]
    }

    /// Largest entrywise angle difference against another matrix.
    ///
    /// # Errors
    ///
    /// `ShapeError` if the column counts differ.
    pub fn max_abs_diff(&self, other: &AngleMatrix) -> Result<f64> {
        if self.n != other.n {
            return Err(MoftError::ShapeError(format!(
                "angle matrices differ in size: {} vs {}",
                self.n, other.n
            )));
        }
        Ok(self
            .theta
            .iter()
            .zip(&other.theta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

fn column_norms(w: &DenseMatrix) -> Result<Vec<f64>> {
    let mut norms = Vec::with_capacity(w.cols());
    for j in 0..w.cols() {
        let norm = w.column(j).iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            return Err(MoftError::DegenerateColumn { index: j, norm });
        }
        norms.push(norm);
    }
    Ok(norms)
}

/// Hyperspherical energy of the columns of `w`.
///
/// Pair distances are floored at `eps` before inversion, so with a positive
/// clamp coincident directions produce a large finite value rather than
/// infinity. `eps = 0` disables the clamp and leaves the caller responsible
/// for keeping directions distinct.
///
/// # Errors
///
/// `DegenerateColumn` if any column has norm ≤ 1e-12; `InvalidInput` if
/// `eps` is negative or not finite.
pub fn hyperspherical_energy(w: &DenseMatrix, eps: f64) -> Result<f64> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(MoftError::InvalidInput(format!(
            "eps must be non-negative and finite, got {eps}"
        )));
    }
    let norms = column_norms(w)?;
    let n = w.cols();
    let d = w.rows();
    let mut energy = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut dist_sq = 0.0;
            for k in 0..d {
                let delta = w.get(k, i) / norms[i] - w.get(k, j) / norms[j];
                dist_sq += delta * delta;
            }
            energy += 1.0 / dist_sq.sqrt().max(eps);
        }
    }
    Ok(energy)
}

/// Pairwise angles between the columns of `w`.
///
/// # Errors
///
/// `DegenerateColumn` if any column has norm ≤ 1e-12.
pub fn pairwise_angles(w: &DenseMatrix) -> Result<AngleMatrix> {
    let norms = column_norms(w)?;
    let n = w.cols();
    let d = w.rows();
    let mut theta = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut dot = 0.0;
            for k in 0..d {
                dot += w.get(k, i) * w.get(k, j);
            }
            let cos = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            let angle = cos.acos();
            theta[i * n + j] = angle;
            theta[j * n + i] = angle;
        }
    }
    Ok(AngleMatrix { n, theta })
}

/// Outcome of an angle-preservation measurement.
#[derive(Debug, Clone, Serialize)]
pub struct PreservationReport {
    /// Largest pairwise-angle change between `A·B` and `A·R·B`.
    pub max_angle_delta: f64,
    /// `‖RᵀGR − G‖_F` with `G = AᵀA` — the algebraic preservation condition.
    pub condition_residual: f64,
    /// Largest off-diagonal `|bᵢᵀGbⱼ|`: the non-degeneracy margin. Near zero
    /// means the columns don't interact through `G` and angle equality says
    /// nothing about the condition.
    pub hypothesis_margin: f64,
    /// Whether `max_angle_delta ≤ tol`.
    pub passes: bool,
}

/// Measures how well the rotation `rot` preserves pairwise column angles of
/// the principal part `A·B`, and evaluates the algebraic condition
/// `RᵀGR = G` alongside.
///
/// # Errors
///
/// `InvalidRotation` if `rot` is not orthogonal within 1e-8 or has the wrong
/// shape; `DegenerateColumn` if a principal column collapses.
pub fn check_preservation(
    dec: &SubspaceDecomposition,
    rot: &DenseMatrix,
    tol: f64,
) -> Result<PreservationReport> {
    let r = dec.rank();
    if rot.shape() != (r, r) {
        return Err(MoftError::InvalidRotation(format!(
            "rotation must be {r}x{r}, got {}x{}",
            rot.rows(),
            rot.cols()
        )));
    }
    let orth = crate::matrix::orthonormality_residual(rot);
    if orth > 1e-8 {
        return Err(MoftError::InvalidRotation(format!(
            "matrix is not orthogonal: ‖RᵀR − I‖_F = {orth:e}"
        )));
    }

    let gram = dec.a().transpose().matmul(dec.a())?;
    let condition_residual = rot
        .transpose()
        .matmul(&gram)?
        .matmul(rot)?
        .sub(&gram)?
        .frobenius_norm();

    // bᵢᵀGbⱼ over ordered pairs: off-diagonal of BᵀGB.
    let bgb = dec.b().transpose().matmul(&gram)?.matmul(dec.b())?;
    let mut hypothesis_margin = 0.0f64;
    for i in 0..bgb.rows() {
        for j in 0..bgb.cols() {
            if i != j {
                hypothesis_margin = hypothesis_margin.max(bgb.get(i, j).abs());
            }
        }
    }

    let before = pairwise_angles(&dec.a().matmul(dec.b())?)?;
    let after = pairwise_angles(&dec.a().matmul(rot)?.matmul(dec.b())?)?;
    let max_angle_delta = before.max_abs_diff(&after)?;

    Ok(PreservationReport {
        max_angle_delta,
        condition_residual,
        hypothesis_margin,
        passes: max_angle_delta <= tol,
    })
}
