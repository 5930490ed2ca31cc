//! Additive low-rank baselines for head-to-head comparisons.
//!
//! Two reference adapters share the MOFT trainer's conventions (rows are
//! samples, frozen base map, explicit gradients):
//!
//! - **LoRA** learns an additive update `ΔW = A·B` with `A ∈ ℝ^{d×r}` drawn
//!   from `N(0, 1/d)` and `B ∈ ℝ^{r×n}` zero-initialized, `r(d + n)`
//!   trainable scalars.
//! - **LoRA-XS** freezes `A = U_r` and `B = S_r·V_rᵀ` from the principal
//!   split and learns only an `r×r` core `M`, giving `ΔW = A·M·B` with `r²`
//!   trainable scalars — the closest additive cousin of the rotation
//!   adapter, with the same frozen factors but no orthogonality constraint.
//!
//! Both start at `ΔW = 0`, so their initial output is exactly the
//! pre-trained map.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{MoftError, Result};
use crate::matrix::DenseMatrix;
use crate::subspace::{SubspaceDecomposition, Variant};

/// Additive low-rank adapter: `H = X·W_pre + (X·A)·B`.
#[derive(Debug, Clone)]
pub struct LoraAdapter {
    w_pre: DenseMatrix,
    a: DenseMatrix,
    b: DenseMatrix,
}

impl LoraAdapter {
    /// Seeded initialization: `A ~ N(0, 1/d)`, `B = 0`.
    ///
    /// # Errors
    ///
    /// `InvalidRank` if `r` is zero or exceeds `min(d, n)`.
    pub fn new(w_pre: &DenseMatrix, r: usize, seed: u64) -> Result<Self> {
        let (d, n) = w_pre.shape();
        if r == 0 || r > d.min(n) {
            return Err(MoftError::InvalidRank(format!(
                "rank {r} out of range for a {d}x{n} matrix"
            )));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let a = DenseMatrix::gaussian(d, r, &mut rng).scale(1.0 / (d as f64).sqrt());
        Ok(LoraAdapter {
            w_pre: w_pre.clone(),
            a,
            b: DenseMatrix::zeros(r, n),
        })
    }

    /// Trainable scalars: `r(d + n)`.
    pub fn trainable_param_count(&self) -> usize {
        self.a.rows() * self.a.cols() + self.b.rows() * self.b.cols()
    }

    /// Precomputes the frozen term `X·W_pre`.
    pub fn compute_cache(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        x.matmul(&self.w_pre)
    }

    /// Forward map `X·W_pre + (X·A)·B`.
    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let z = self.compute_cache(x)?;
        self.forward_cached(x, &z)
    }

    /// Forward map reusing `z = X·W_pre`.
    pub fn forward_cached(&self, x: &DenseMatrix, z: &DenseMatrix) -> Result<DenseMatrix> {
        x.matmul(&self.a)?.matmul(&self.b)?.add(z)
    }

    /// Gradients `(∂L/∂A, ∂L/∂B)` for upstream `grad_h`.
    pub fn backward(
        &self,
        x: &DenseMatrix,
        grad_h: &DenseMatrix,
    ) -> Result<(DenseMatrix, DenseMatrix)> {
        let g_a = x.transpose().matmul(&grad_h.matmul(&self.b.transpose())?)?;
        let g_b = x.matmul(&self.a)?.transpose().matmul(grad_h)?;
        Ok((g_a, g_b))
    }

    /// In-place SGD step.
    pub fn apply_step(&mut self, g_a: &DenseMatrix, g_b: &DenseMatrix, lr: f64) -> Result<()> {
        self.a = self.a.sub(&g_a.scale(lr))?;
        self.b = self.b.sub(&g_b.scale(lr))?;
        Ok(())
    }
}

/// Frozen-factor additive adapter: `H = X·W_pre + (X·A)·M·B`.
#[derive(Debug, Clone)]
pub struct LoraXsAdapter {
    dec: SubspaceDecomposition,
    m: DenseMatrix,
}

impl LoraXsAdapter {
    /// Wraps a MOFT-variant decomposition with a zero-initialized core.
    ///
    /// # Errors
    ///
    /// `InvalidInput` if `dec` is not the MOFT variant.
    pub fn new(dec: SubspaceDecomposition) -> Result<Self> {
        if dec.variant() != Variant::Moft {
            return Err(MoftError::InvalidInput(
                "LoRA-XS requires a MOFT-variant decomposition".to_string(),
            ));
        }
        let r = dec.rank();
        Ok(LoraXsAdapter {
            dec,
            m: DenseMatrix::zeros(r, r),
        })
    }

    /// Trainable scalars: `r²`.
    pub fn trainable_param_count(&self) -> usize {
        let r = self.dec.rank();
        r * r
    }

    /// Precomputes `(X·A, X·W_pre)`.
    pub fn compute_caches(&self, x: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
        let xa = x.matmul(self.dec.a())?;
        let z = x.matmul(&self.dec.w_pre())?;
        Ok((xa, z))
    }

    /// Forward map `X·W_pre + (X·A)·M·B`.
    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let (xa, z) = self.compute_caches(x)?;
        self.forward_cached(&xa, &z)
    }

    /// Forward map reusing the frozen caches.
    pub fn forward_cached(&self, xa: &DenseMatrix, z: &DenseMatrix) -> Result<DenseMatrix> {
        xa.matmul(&self.m)?.matmul(self.dec.b())?.add(z)
    }

    /// Gradient `∂L/∂M` for upstream `grad_h`.
    pub fn backward_cached(&self, xa: &DenseMatrix, grad_h: &DenseMatrix) -> Result<DenseMatrix> {
        xa.transpose()
            .matmul(&grad_h.matmul(&self.dec.b().transpose())?)
    }

    /// In-place SGD step on the core.
    pub fn apply_step(&mut self, g_m: &DenseMatrix, lr: f64) -> Result<()> {
        self.m = self.m.sub(&g_m.scale(lr))?;
        Ok(())
    }
}
