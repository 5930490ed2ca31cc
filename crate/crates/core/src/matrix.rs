//! Dense row-major matrices over `f64`.
//!
//! [`DenseMatrix`] is the universal carrier for every matrix in the crate:
//! weights `W`, factors `A`/`B`, rotations `R`, skew generators `Q`, data
//! batches `X`, and activations `H`. Two properties are load-bearing:
//!
//! - **Finiteness.** Entries are finite after any public operation; the
//!   fallible constructor rejects NaN/Inf and the infallible ones assert it.
//! - **Determinism.** Reductions run in a fixed order (row-major, innermost
//!   dimension last) with no re-association, so results are bit-identical
//!   across runs and platforms with IEEE-754 doubles.
//!
//! Matrices are value types: operations return fresh matrices and never
//! mutate their operands. Desk scale only — nothing here is tuned past a few
//! thousand rows or columns.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{MoftError, Result};

/// Dense row-major matrix of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major data.
    ///
    /// # Errors
    ///
    /// `InvalidInput` if either dimension is zero, the data length does not
    /// equal `rows * cols`, or any entry is non-finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(MoftError::InvalidInput(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(MoftError::InvalidInput(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(MoftError::InvalidInput(format!(
                "non-finite entry {} at flat index {idx}",
                data[idx]
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// All-zero matrix. Panics if a dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// The `k`-by-`k` identity. Panics if `k` is zero.
    pub fn identity(k: usize) -> Self {
        let mut m = Self::zeros(k, k);
        for i in 0..k {
            m.data[i * k + i] = 1.0;
        }
        m
    }

    /// Builds a matrix entry by entry from `f(row, col)`.
    ///
    /// Panics if a dimension is zero or `f` produces a non-finite value.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let v = f(i, j);
                assert!(v.is_finite(), "non-finite entry at ({i}, {j})");
                data.push(v);
            }
        }
        Self { rows, cols, data }
    }

    /// Standard-normal random matrix drawn row-major from `rng`.
    pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        Self::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    /// Number of rows.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of columns.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// `(rows, cols)` pair.
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Row-major view of the underlying storage.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Test-only escape hatch that skips validation, for exercising the
    /// defensive checks downstream operations are required to make.
    #[cfg(test)]
    pub(crate) fn new_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Self { rows, cols, data }
    }

    /// Entry at `(i, j)`. Panics on out-of-bounds indices.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.rows && j < self.cols, "index out of bounds");
        self.data[i * self.cols + j]
    }

    /// Overwrites the entry at `(i, j)`. Panics on out-of-bounds indices or a
    /// non-finite value.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(i < self.rows && j < self.cols, "index out of bounds");
        assert!(v.is_finite(), "non-finite entry");
        self.data[i * self.cols + j] = v;
    }

    /// Borrow of row `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        assert!(i < self.rows, "row index out of bounds");
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Copy of column `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        assert!(j < self.cols, "column index out of bounds");
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    /// Matrix product `self · rhs`.
    ///
    /// Accumulation runs over `k` in ascending order for every output entry
    /// (i-k-j loop nest), which fixes the floating-point reduction order.
    ///
    /// # Errors
    ///
    /// `ShapeError` if `self.cols != rhs.rows`.
    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != rhs.rows {
            return Err(MoftError::ShapeError(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let lhs_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for j in 0..rhs.cols {
                    lhs_row[j] += a * rhs_row[j];
                }
            }
        }
        Ok(out)
    }

    /// Transposed copy.
    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Frobenius norm, summed in row-major order.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Entrywise sum.
    ///
    /// # Errors
    ///
    /// `ShapeError` on mismatched shapes.
    pub fn add(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(rhs, |a, b| a + b, "add")
    }

    /// Entrywise difference `self − rhs`.
    ///
    /// # Errors
    ///
    /// `ShapeError` on mismatched shapes.
    pub fn sub(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(rhs, |a, b| a - b, "sub")
    }

    /// Scalar multiple. Panics on a non-finite factor.
    pub fn scale(&self, factor: f64) -> DenseMatrix {
        assert!(factor.is_finite(), "non-finite scale factor");
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= factor;
        }
        out
    }

    /// Right-multiplication by `diag(factors)`: column `j` is scaled by
    /// `factors[j]`.
    ///
    /// # Errors
    ///
    /// `ShapeError` if `factors.len() != cols`.
    pub fn scale_columns(&self, factors: &[f64]) -> Result<DenseMatrix> {
        if factors.len() != self.cols {
            return Err(MoftError::ShapeError(format!(
                "expected {} column factors, got {}",
                self.cols,
                factors.len()
            )));
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[i * self.cols + j] *= factors[j];
            }
        }
        Ok(out)
    }

    /// Left-multiplication by `diag(factors)`: row `i` is scaled by
    /// `factors[i]`.
    ///
    /// # Errors
    ///
    /// `ShapeError` if `factors.len() != rows`.
    pub fn scale_rows(&self, factors: &[f64]) -> Result<DenseMatrix> {
        if factors.len() != self.rows {
            return Err(MoftError::ShapeError(format!(
                "expected {} row factors, got {}",
                self.rows,
                factors.len()
            )));
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[i * self.cols + j] *= factors[i];
            }
        }
        Ok(out)
    }

    /// Largest absolute entrywise difference; a blunt instrument for tests
    /// and residual checks.
    ///
    /// # Errors
    ///
    /// `ShapeError` on mismatched shapes.
    pub fn max_abs_diff(&self, rhs: &DenseMatrix) -> Result<f64> {
        if self.shape() != rhs.shape() {
            return Err(MoftError::ShapeError(format!(
                "cannot compare {}x{} with {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    fn zip_with(
        &self,
        rhs: &DenseMatrix,
        f: impl Fn(f64, f64) -> f64,
        op: &str,
    ) -> Result<DenseMatrix> {
        if self.shape() != rhs.shape() {
            return Err(MoftError::ShapeError(format!(
                "cannot {op} {}x{} and {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| f(*a, *b))
            .collect();
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }
}

/// Deviation of `m` from orthonormal columns: `‖MᵀM − I‖_F`.
pub fn orthonormality_residual(m: &DenseMatrix) -> f64 {
    let gram = m.transpose().matmul(m).expect("shapes agree by construction");
    let eye = DenseMatrix::identity(m.cols());
    gram.sub(&eye).expect("square by construction").frobenius_norm()
}
