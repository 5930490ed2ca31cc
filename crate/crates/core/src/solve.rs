//! Internal dense linear-algebra kernels: LU solves and Householder QR.
//!
//! These back the Cayley transform (square solves against a well-conditioned
//! `I + Q`) and the randomized SVD (thin QR of tall range probes). They are
//! deliberately plain loops with fixed iteration order — no blocking, no
//! pivoting strategies beyond partial row pivoting — because desk-scale
//! determinism matters more here than throughput.

use crate::error::{MoftError, Result};
use crate::matrix::DenseMatrix;

/// Solves `A · X = B` for square `A` via LU with partial pivoting.
///
/// # Errors
///
/// `ShapeError` on non-square `A` or mismatched `B`; `NumericalFailure` if a
/// pivot collapses to zero (singular to working precision).
pub(crate) fn lu_solve(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(MoftError::ShapeError(format!(
            "lu_solve needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if b.rows() != n {
        return Err(MoftError::ShapeError(format!(
            "right-hand side has {} rows, expected {n}",
            b.rows()
        )));
    }
    let nrhs = b.cols();
    let mut lu: Vec<f64> = a.data().to_vec();
    let mut rhs: Vec<f64> = b.data().to_vec();

    for k in 0..n {
        // Partial pivoting: largest magnitude in column k at or below row k.
        let mut pivot_row = k;
        let mut pivot_mag = lu[k * n + k].abs();
        for i in k + 1..n {
            let mag = lu[i * n + k].abs();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = i;
            }
        }
        if pivot_mag == 0.0 {
            return Err(MoftError::NumericalFailure(format!(
                "singular matrix in LU solve (zero pivot at column {k})"
            )));
        }
        if pivot_row != k {
            for j in 0..n {
                lu.swap(k * n + j, pivot_row * n + j);
            }
            for j in 0..nrhs {
                rhs.swap(k * nrhs + j, pivot_row * nrhs + j);
            }
        }
        let pivot = lu[k * n + k];
        for i in k + 1..n {
            let factor = lu[i * n + k] / pivot;
            if factor == 0.0 {
                continue;
            }
            lu[i * n + k] = factor;
            for j in k + 1..n {
                lu[i * n + j] -= factor * lu[k * n + j];
            }
            for j in 0..nrhs {
                rhs[i * nrhs + j] -= factor * rhs[k * nrhs + j];
            }
        }
    }

    // Back substitution on the upper triangle.
    for k in (0..n).rev() {
        let pivot = lu[k * n + k];
        for j in 0..nrhs {
            let mut acc = rhs[k * nrhs + j];
            for m in k + 1..n {
                acc -= lu[k * n + m] * rhs[m * nrhs + j];
            }
            rhs[k * nrhs + j] = acc / pivot;
        }
    }
    DenseMatrix::new(n, nrhs, rhs)
}

/// Thin Householder QR of `a` (rows ≥ cols): returns `Q` with orthonormal
/// columns spanning the column space, `a.rows() × a.cols()`.
///
/// Rank deficiency is tolerated: a zero (or fully eliminated) column yields
/// an identity reflector and `Q` stays orthonormal regardless.
///
/// # Errors
///
/// `ShapeError` if `a` has more columns than rows.
pub(crate) fn qr_thin_q(a: &DenseMatrix) -> Result<DenseMatrix> {
    let (m, n) = a.shape();
    if n > m {
        return Err(MoftError::ShapeError(format!(
            "thin QR needs rows >= cols, got {m}x{n}"
        )));
    }
    let mut r: Vec<f64> = a.data().to_vec();
    // Householder vectors, one per column, stored dense for simplicity.
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(n);

    for k in 0..n {
        let mut v = vec![0.0; m];
        let mut norm_sq = 0.0;
        for i in k..m {
            let x = r[i * n + k];
            v[i] = x;
            norm_sq += x * x;
        }
        let norm = norm_sq.sqrt();
        if norm == 0.0 {
            // Degenerate column: record a no-op reflector.
            vs.push(vec![0.0; m]);
            continue;
        }
        let alpha = if v[k] >= 0.0 { -norm } else { norm };
        v[k] -= alpha;
        let v_norm_sq: f64 = v[k..].iter().map(|x| x * x).sum();
        if v_norm_sq == 0.0 {
            vs.push(vec![0.0; m]);
            continue;
        }
        // Apply H = I − 2vvᵀ/‖v‖² to the remaining block of R.
        for j in k..n {
            let mut dot = 0.0;
            for i in k..m {
                dot += v[i] * r[i * n + j];
            }
            let coeff = 2.0 * dot / v_norm_sq;
            for i in k..m {
                r[i * n + j] -= coeff * v[i];
            }
        }
        vs.push(v);
    }

    // Accumulate Q = H_0 · H_1 · … · H_{n−1} applied to the first n columns
    // of the identity, by applying reflectors in reverse order.
    let mut q = vec![0.0; m * n];
    for j in 0..n {
        q[j * n + j] = 1.0;
    }
    for k in (0..n).rev() {
        let v = &vs[k];
        let v_norm_sq: f64 = v.iter().map(|x| x * x).sum();
        if v_norm_sq == 0.0 {
            continue;
        }
        for j in 0..n {
            let mut dot = 0.0;
            for i in k..m {
                dot += v[i] * q[i * n + j];
            }
            let coeff = 2.0 * dot / v_norm_sq;
            for i in k..m {
                q[i * n + j] -= coeff * v[i];
            }
        }
    }
    DenseMatrix::new(m, n, q)
}

/// Least-squares solve of square `A · X = B` via Householder QR with back
/// substitution; the defensive fallback path for Cayley solves.
///
/// # Errors
///
/// `ShapeError` on shape mismatch; `NumericalFailure` if the triangular
/// factor has a (near-)zero diagonal, i.e. `A` is numerically rank-deficient.
pub(crate) fn qr_solve(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(MoftError::ShapeError(format!(
            "qr_solve needs square A and matching B, got {}x{} and {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let nrhs = b.cols();
    let mut r: Vec<f64> = a.data().to_vec();
    let mut rhs: Vec<f64> = b.data().to_vec();

    for k in 0..n {
        let mut v = vec![0.0; n];
        let mut norm_sq = 0.0;
        for i in k..n {
            let x = r[i * n + k];
            v[i] = x;
            norm_sq += x * x;
        }
        let norm = norm_sq.sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if v[k] >= 0.0 { -norm } else { norm };
        v[k] -= alpha;
        let v_norm_sq: f64 = v[k..].iter().map(|x| x * x).sum();
        if v_norm_sq == 0.0 {
            continue;
        }
        for j in k..n {
            let mut dot = 0.0;
            for i in k..n {
                dot += v[i] * r[i * n + j];
            }
            let coeff = 2.0 * dot / v_norm_sq;
            for i in k..n {
                r[i * n + j] -= coeff * v[i];
            }
        }
        for j in 0..nrhs {
            let mut dot = 0.0;
            for i in k..n {
                dot += v[i] * rhs[i * nrhs + j];
            }
            let coeff = 2.0 * dot / v_norm_sq;
            for i in k..n {
                rhs[i * nrhs + j] -= coeff * v[i];
            }
        }
    }

    let scale = r
        .iter()
        .map(|x| x.abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    for k in (0..n).rev() {
        let pivot = r[k * n + k];
        if pivot.abs() < 1e-14 * scale {
            return Err(MoftError::NumericalFailure(format!(
                "rank-deficient system in least-squares solve (diagonal {k})"
            )));
        }
        for j in 0..nrhs {
            let mut acc = rhs[k * nrhs + j];
            for m in k + 1..n {
                acc -= r[k * n + m] * rhs[m * nrhs + j];
            }
            rhs[k * nrhs + j] = acc / pivot;
        }
    }
    DenseMatrix::new(n, nrhs, rhs)
}
