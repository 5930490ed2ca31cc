//! Singular value decomposition: exact one-sided Jacobi and a seeded
//! randomized range finder.
//!
//! The exact path favors robustness over speed, which is the right trade at
//! desk scale (dimensions up to a few hundred): one-sided Jacobi rotations
//! orthogonalize the columns of `W` in place, so singular vectors come out
//! orthonormal to near machine precision even for clustered or tiny singular
//! values.
//!
//! The randomized path follows the Gaussian range-finder recipe: probe
//! `Y = W·Ω`, orthonormalize, optionally run power iterations with a QR
//! re-orthogonalization after every application of `W` or `Wᵀ` (skipping the
//! re-orthogonalization destroys the smallest recovered singular values), and
//! finish with an exact SVD of the projected `r×n` matrix.
//!
//! Both paths share one sign convention so factorizations are reproducible:
//! the largest-magnitude entry of every left singular vector is non-negative,
//! ties broken by the lowest row index.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{MoftError, Result};
use crate::matrix::DenseMatrix;
use crate::solve::qr_thin_q;

/// Maximum number of full Jacobi sweeps before declaring non-convergence.
const MAX_SWEEPS: usize = 30;
/// A column pair (p, q) is considered orthogonal when
/// `|gₚᵀg_q| ≤ PAIR_TOL·‖gₚ‖·‖g_q‖`. The scale-invariant form keeps left
/// singular vectors orthonormal even when singular values span many orders
/// of magnitude, which an absolute off-diagonal threshold cannot guarantee.
const PAIR_TOL: f64 = 1e-14;

/// Result of a (possibly truncated) singular value decomposition
/// `W ≈ U · diag(S) · Vᵀ`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// Left singular vectors, `d×k`, orthonormal columns.
    pub u: DenseMatrix,
    /// Singular values, length `k`, non-negative and non-increasing.
    pub s: Vec<f64>,
    /// Right singular vectors, `n×k`, orthonormal columns.
    pub v: DenseMatrix,
}

impl SvdResult {
    /// Materializes `U · diag(S) · Vᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let us = self
            .u
            .scale_columns(&self.s)
            .expect("k factors by construction");
        us.matmul(&self.v.transpose())
            .expect("shapes agree by construction")
    }
}

/// Full SVD of `W` with `k = min(rows, cols)`.
///
/// Deterministic, including the column signs (largest-magnitude entry of
/// each `U` column non-negative, ties broken by lowest row index). Singular
/// values are sorted non-increasing; exact-zero singular values get their
/// left singular vectors filled in by deterministic Gram–Schmidt completion
/// so `U` always has orthonormal columns.
///
/// # Errors
///
/// `InvalidInput` on non-finite entries; `NumericalFailure` if Jacobi sweeps
/// fail to converge within the iteration cap.
pub fn svd_exact(w: &DenseMatrix) -> Result<SvdResult> {
    if let Some(bad) = w.data().iter().find(|v| !v.is_finite()) {
        return Err(MoftError::InvalidInput(format!(
            "non-finite entry {bad} in SVD input"
        )));
    }
    let (d, n) = w.shape();
    let mut result = if d >= n {
        jacobi_tall(w)?
    } else {
        // Transpose duality: W = (Wᵀ)ᵀ = (U'S V'ᵀ)ᵀ = V' S U'ᵀ.
        let t = jacobi_tall(&w.transpose())?;
        SvdResult {
            u: t.v,
            s: t.s,
            v: t.u,
        }
    };
    apply_sign_convention(&mut result.u, &mut result.v);
    Ok(result)
}

/// Rank-`r` randomized SVD with `n_iter` power iterations and a fixed seed.
///
/// # Errors
///
/// `InvalidRank` if `r` is zero or exceeds `min(rows, cols)`; `InvalidInput`
/// on non-finite entries.
pub fn svd_randomized(w: &DenseMatrix, r: usize, n_iter: usize, seed: u64) -> Result<SvdResult> {
    let (d, n) = w.shape();
    if r == 0 || r > d.min(n) {
        return Err(MoftError::InvalidRank(format!(
            "rank {r} out of range for a {d}x{n} matrix"
        )));
    }
    if let Some(bad) = w.data().iter().find(|v| !v.is_finite()) {
        return Err(MoftError::InvalidInput(format!(
            "non-finite entry {bad} in SVD input"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let omega = DenseMatrix::gaussian(n, r, &mut rng);
    let mut q = qr_thin_q(&w.matmul(&omega)?)?;
    let wt = w.transpose();
    for _ in 0..n_iter {
        let qz = qr_thin_q(&wt.matmul(&q)?)?;
        q = qr_thin_q(&w.matmul(&qz)?)?;
    }
    let projected = q.transpose().matmul(w)?; // r×n
    let inner = svd_exact(&projected)?;
    let mut u = q.matmul(&inner.u)?;
    let mut v = inner.v;
    apply_sign_convention(&mut u, &mut v);
    Ok(SvdResult { u, s: inner.s, v })
}

/// Extends a `d×k` matrix with orthonormal columns to a full orthonormal
/// `d×d` basis by deterministic Gram–Schmidt against standard basis vectors.
///
/// # Errors
///
/// `InvalidBasis` if the input columns are not orthonormal within `1e-8`.
pub fn complete_left_basis(u: &DenseMatrix) -> Result<DenseMatrix> {
    let (d, k) = u.shape();
    if k > d {
        return Err(MoftError::InvalidBasis(format!(
            "cannot complete {d}x{k}: more columns than rows"
        )));
    }
    let residual = crate::matrix::orthonormality_residual(u);
    if residual > 1e-8 {
        return Err(MoftError::InvalidBasis(format!(
            "columns not orthonormal (residual {residual:e})"
        )));
    }
    let mut cols: Vec<Vec<f64>> = (0..k).map(|j| u.column(j)).collect();
    while cols.len() < d {
        cols.push(next_orthonormal_column(&cols, d));
    }
    Ok(DenseMatrix::from_fn(d, d, |i, j| cols[j][i]))
}

/// Picks the standard basis vector with the largest component outside
/// `span(cols)`, orthogonalizes it twice, and normalizes. Deterministic:
/// ties resolve to the lowest index.
fn next_orthonormal_column(cols: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for cand in 0..d {
        let mut v = vec![0.0; d];
        v[cand] = 1.0;
        project_out(&mut v, cols);
        let norm = vec_norm(&v);
        if best.as_ref().map_or(true, |(b, _)| norm > *b) {
            best = Some((norm, v));
        }
    }
    let (_, mut v) = best.expect("d > 0 guarantees a candidate");
    // Second orthogonalization pass scrubs the rounding left by the first.
    project_out(&mut v, cols);
    let norm = vec_norm(&v);
    for x in &mut v {
        *x /= norm;
    }
    v
}

fn project_out(v: &mut [f64], cols: &[Vec<f64>]) {
    for c in cols {
        let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
        for (x, b) in v.iter_mut().zip(c) {
            *x -= dot * b;
        }
    }
}

fn vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One-sided Jacobi on a tall (rows ≥ cols) matrix.
///
/// Works on the transposed layout so each column of `W` is a contiguous row;
/// rotations then touch two contiguous slices. The same rotations accumulate
/// into `V` starting from the identity.
fn jacobi_tall(w: &DenseMatrix) -> Result<SvdResult> {
    let (d, n) = w.shape();
    debug_assert!(d >= n);
    let mut g: Vec<f64> = w.transpose().data().to_vec(); // row j = column j of W
    let mut vt: Vec<f64> = DenseMatrix::identity(n).data().to_vec();

    let mut converged = n < 2;
    for _sweep in 0..MAX_SWEEPS {
        if n < 2 {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..d {
                    let gp = g[p * d + i];
                    let gq = g[q * d + i];
                    app += gp * gp;
                    aqq += gq * gq;
                    apq += gp * gq;
                }
                if apq.abs() <= PAIR_TOL * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (aqq - app) / (2.0 * apq);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..d {
                    let gp = g[p * d + i];
                    let gq = g[q * d + i];
                    g[p * d + i] = c * gp - s * gq;
                    g[q * d + i] = s * gp + c * gq;
                }
                for i in 0..n {
                    let vp = vt[p * n + i];
                    let vq = vt[q * n + i];
                    vt[p * n + i] = c * vp - s * vq;
                    vt[q * n + i] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(MoftError::NumericalFailure(format!(
            "one-sided Jacobi did not converge within {MAX_SWEEPS} sweeps on a {d}x{n} matrix"
        )));
    }

    // Column norms are the singular values; stable-sort them non-increasing.
    let sigma: Vec<f64> = (0..n)
        .map(|j| vec_norm(&g[j * d..(j + 1) * d]))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).expect("norms are finite"));

    let mut s = Vec::with_capacity(n);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for &src in &order {
        let norm = sigma[src];
        s.push(norm);
        if norm > 0.0 {
            u_cols.push(g[src * d..(src + 1) * d].iter().map(|x| x / norm).collect());
        } else {
            // Exact-zero column: fill the slot with a deterministic
            // orthonormal completion so U keeps its invariant.
            u_cols.push(next_orthonormal_column(&u_cols, d));
        }
    }
    let u = DenseMatrix::from_fn(d, n, |i, j| u_cols[j][i]);
    let v = DenseMatrix::from_fn(n, n, |i, j| vt[order[j] * n + i]);
    Ok(SvdResult { u, s, v })
}

/// Flips signs so the largest-magnitude entry of each `U` column is
/// non-negative (ties: lowest row index); `V` columns flip in tandem so the
/// product is unchanged.
fn apply_sign_convention(u: &mut DenseMatrix, v: &mut DenseMatrix) {
    let (d, k) = u.shape();
    let n = v.rows();
    for j in 0..k {
        let mut arg = 0;
        let mut mag = -1.0;
        for i in 0..d {
            let a = u.get(i, j).abs();
            if a > mag {
                mag = a;
                arg = i;
            }
        }
        if u.get(arg, j) < 0.0 {
            for i in 0..d {
                let x = u.get(i, j);
                u.set(i, j, -x);
            }
            for i in 0..n {
                let x = v.get(i, j);
                v.set(i, j, -x);
            }
        }
    }
}
