//! The trainable MOFT adapter: a Cayley rotation and two diagonal scale
//! vectors acting inside a frozen principal subspace.
//!
//! For a batch `X` (rows are samples), the adapted forward map is
//!
//! ```text
//! H = X·W_res + ((X·A)·diag(α))·R·diag(β)·B
//! ```
//!
//! with `R = cayley(q)`. At initialization (`q = 0`, `α = β = 1`) this is
//! exactly `X·W_pre`. Only `q`, `α`, `β` are trainable — `r(r−1)/2 + 2r`
//! numbers — while `A`, `B`, `W_res` stay frozen.
//!
//! The backward pass mirrors the factored forward. Writing `Xa = X·A`,
//! `Xa_s = Xa·diag(α)`, `Y = Xa_s·R`, and `G = ∂L/∂H`:
//!
//! ```text
//! ∂L/∂(Y·diag(β)) = G·Bᵀ                 g_β[j] = Σ_b Y[b,j]·(G·Bᵀ)[b,j]
//! ∂L/∂Y = (G·Bᵀ)·diag(β)                 g_R   = Xa_sᵀ·(∂L/∂Y)
//! ∂L/∂Xa_s = (∂L/∂Y)·Rᵀ                  g_α[j] = Σ_b Xa[b,j]·(∂L/∂Xa_s)[b,j]
//! ```
//!
//! and `g_R` pulls back through the Cayley map to `g_q`. The factored path
//! never materializes a `d×n` matrix, and `Xa`/`X·W_res` can be computed
//! once per dataset and reused across steps ([`MoftAdapter::forward_cached`]).

use crate::cayley::{cayley_backward, cayley_forward, param_len, CayleyParams};
use crate::error::{MoftError, Result};
use crate::matrix::DenseMatrix;
use crate::subspace::{SubspaceDecomposition, Variant};

/// Gradients for the three trainable groups.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Gradient on the Cayley coordinates, length `r(r−1)/2`.
    pub g_q: Vec<f64>,
    /// Gradient on the input-side scales, length `r`.
    pub g_alpha: Vec<f64>,
    /// Gradient on the output-side scales, length `r`.
    pub g_beta: Vec<f64>,
}

/// A frozen decomposition plus its trainable rotation and scales.
#[derive(Debug, Clone)]
pub struct MoftAdapter {
    dec: SubspaceDecomposition,
    cayley: CayleyParams,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    scaling_enabled: bool,
}

impl MoftAdapter {
    /// Wraps a MOFT decomposition at the identity initialization.
    ///
    /// # Errors
    ///
    /// `InvalidInput` if `dec` is not the MOFT variant — the adapter's
    /// angle-preservation guarantee needs an orthonormal `A`.
    pub fn new(dec: SubspaceDecomposition, scaling_enabled: bool) -> Result<Self> {
        if dec.variant() != Variant::Moft {
            return Err(MoftError::InvalidInput(
                "adapter requires a MOFT-variant decomposition".to_string(),
            ));
        }
        let r = dec.rank();
        Ok(MoftAdapter {
            cayley: CayleyParams::identity(r)?,
            alpha: vec![1.0; r],
            beta: vec![1.0; r],
            scaling_enabled,
            dec,
        })
    }

    /// Rebuilds an adapter from stored parameter vectors.
    ///
    /// # Errors
    ///
    /// `InvalidInput` for a non-MOFT decomposition or non-finite values;
    /// `ShapeError` if any vector length disagrees with the rank.
    pub fn from_parts(
        dec: SubspaceDecomposition,
        q: Vec<f64>,
        alpha: Vec<f64>,
        beta: Vec<f64>,
        scaling_enabled: bool,
    ) -> Result<Self> {
        let r = dec.rank();
        let cayley = CayleyParams::new(r, q)?;
        for (name, v) in [("alpha", &alpha), ("beta", &beta)] {
            if v.len() != r {
                return Err(MoftError::ShapeError(format!(
                    "{name} must have length {r}, got {}",
                    v.len()
                )));
            }
            if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                return Err(MoftError::InvalidInput(format!(
                    "non-finite {name} entry {bad}"
                )));
            }
        }
        if dec.variant() != Variant::Moft {
            return Err(MoftError::InvalidInput(
                "adapter requires a MOFT-variant decomposition".to_string(),
            ));
        }
        Ok(MoftAdapter {
            dec,
            cayley,
            alpha,
            beta,
            scaling_enabled,
        })
    }

    /// The frozen decomposition underneath.
    pub fn decomposition(&self) -> &SubspaceDecomposition {
        &self.dec
    }

    /// Current Cayley coordinates.
    pub fn cayley(&self) -> &CayleyParams {
        &self.cayley
    }

    /// Input-side scales `α`.
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Output-side scales `β`.
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// Whether `α`/`β` participate in training.
    pub fn scaling_enabled(&self) -> bool {
        self.scaling_enabled
    }

    /// Mutable Cayley coordinates; callers must keep entries finite.
    pub fn q_mut(&mut self) -> &mut [f64] {
        self.cayley.q_mut()
    }

    /// Mutable input-side scales; callers must keep entries finite.
    pub fn alpha_mut(&mut self) -> &mut [f64] {
        &mut self.alpha
    }

    /// Mutable output-side scales; callers must keep entries finite.
    pub fn beta_mut(&mut self) -> &mut [f64] {
        &mut self.beta
    }

    /// Materializes the current rotation `R = cayley(q)`.
    pub fn rotation(&self) -> Result<DenseMatrix> {
        cayley_forward(&self.cayley)
    }

    /// Number of trainable scalars: `r(r−1)/2`, plus `2r` when scaling is on.
    pub fn trainable_param_count(&self) -> usize {
        let r = self.dec.rank();
        param_len(r) + if self.scaling_enabled { 2 * r } else { 0 }
    }

    /// Precomputes the frozen per-dataset factors `(X·A, X·W_res)`.
    ///
    /// # Errors
    ///
    /// `ShapeError` if `x` does not have `d` columns.
    pub fn compute_caches(&self, x: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
        if x.cols() != self.dec.d() {
            return Err(MoftError::ShapeError(format!(
                "input must have {} columns, got {}",
                self.dec.d(),
                x.cols()
            )));
        }
        Ok((x.matmul(self.dec.a())?, x.matmul(self.dec.w_res())?))
    }

    /// Adapted forward map for a batch with rows as samples.
    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let (xa, z) = self.compute_caches(x)?;
        self.forward_cached(&xa, &z)
    }

    /// Forward map from precomputed caches `xa = X·A`, `z = X·W_res`.
    ///
    /// Bitwise identical to [`MoftAdapter::forward`] on the same batch.
    pub fn forward_cached(&self, xa: &DenseMatrix, z: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_cache_shapes(xa, Some(z))?;
        let rot = cayley_forward(&self.cayley)?;
        xa.scale_columns(&self.alpha)?
            .matmul(&rot)?
            .scale_columns(&self.beta)?
            .matmul(self.dec.b())?
            .add(z)
    }

    /// Gradients of all three parameter groups for upstream `grad_h = ∂L/∂H`.
    ///
    /// Scale gradients are always computed; with scaling disabled the
    /// trainer simply never applies them.
    pub fn backward(&self, x: &DenseMatrix, grad_h: &DenseMatrix) -> Result<Gradients> {
        if x.cols() != self.dec.d() {
            return Err(MoftError::ShapeError(format!(
                "input must have {} columns, got {}",
                self.dec.d(),
                x.cols()
            )));
        }
        let xa = x.matmul(self.dec.a())?;
        self.backward_cached(&xa, grad_h)
    }

    /// Backward pass from the precomputed cache `xa = X·A`.
    pub fn backward_cached(&self, xa: &DenseMatrix, grad_h: &DenseMatrix) -> Result<Gradients> {
        self.check_cache_shapes(xa, None)?;
        if grad_h.shape() != (xa.rows(), self.dec.n()) {
            return Err(MoftError::ShapeError(format!(
                "output gradient must be {}x{}, got {}x{}",
                xa.rows(),
                self.dec.n(),
                grad_h.rows(),
                grad_h.cols()
            )));
        }
        let r = self.dec.rank();
        let rot = cayley_forward(&self.cayley)?;
        let xa_s = xa.scale_columns(&self.alpha)?;
        let y = xa_s.matmul(&rot)?;

        let d_ys = grad_h.matmul(&self.dec.b().transpose())?;
        let mut g_beta = vec![0.0; r];
        for b in 0..y.rows() {
            for j in 0..r {
                g_beta[j] += y.get(b, j) * d_ys.get(b, j);
            }
        }
        let d_y = d_ys.scale_columns(&self.beta)?;
        let g_rot = xa_s.transpose().matmul(&d_y)?;
        let g_q = cayley_backward(&self.cayley, &g_rot)?;
        let d_xa_s = d_y.matmul(&rot.transpose())?;
        let mut g_alpha = vec![0.0; r];
        for b in 0..xa.rows() {
            for j in 0..r {
                g_alpha[j] += xa.get(b, j) * d_xa_s.get(b, j);
            }
        }
        Ok(Gradients {
            g_q,
            g_alpha,
            g_beta,
        })
    }

    /// Materializes the full adapted weight
    /// `A·diag(α)·R·diag(β)·B + W_res`.
    pub fn merge(&self) -> Result<DenseMatrix> {
        let rot = cayley_forward(&self.cayley)?;
        self.dec
            .a()
            .scale_columns(&self.alpha)?
            .matmul(&rot)?
            .scale_columns(&self.beta)?
            .matmul(self.dec.b())?
            .add(self.dec.w_res())
    }

    fn check_cache_shapes(&self, xa: &DenseMatrix, z: Option<&DenseMatrix>) -> Result<()> {
        if xa.cols() != self.dec.rank() {
            return Err(MoftError::ShapeError(format!(
                "subspace cache must have {} columns, got {}",
                self.dec.rank(),
                xa.cols()
            )));
        }
        if let Some(z) = z {
            if z.shape() != (xa.rows(), self.dec.n()) {
                return Err(MoftError::ShapeError(format!(
                    "residual cache must be {}x{}, got {}x{}",
                    xa.rows(),
                    self.dec.n(),
                    z.rows(),
                    z.cols()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::{decompose, SvdMode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn make_adapter(d: usize, n: usize, r: usize, scaling: bool, seed: u64) -> MoftAdapter {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let w = DenseMatrix::gaussian(d, n, &mut rng);
        let dec = decompose(&w, r, Variant::Moft, SvdMode::Exact).unwrap();
        MoftAdapter::new(dec, scaling).unwrap()
    }

    fn randomize(adapter: &mut MoftAdapter, seed: u64) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let q = CayleyParams::random(adapter.decomposition().rank(), 0.7, &mut rng).unwrap();
        adapter.q_mut().copy_from_slice(q.q());
        for a in adapter.alpha_mut() {
            *a = 0.5 + 1.3 * rand::Rng::random::<f64>(&mut rng);
        }
        for b in adapter.beta_mut() {
            *b = 0.5 + 1.3 * rand::Rng::random::<f64>(&mut rng);
        }
    }

    fn rel_err(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(1e-300)
    }

    #[test]
    fn initialization_reproduces_the_pretrained_map() {
        let adapter = make_adapter(10, 8, 3, true, 1);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let x = DenseMatrix::gaussian(5, 10, &mut rng);
        let h = adapter.forward(&x).unwrap();
        let direct = x.matmul(&adapter.decomposition().w_pre()).unwrap();
        assert!(rel_err(&h, &direct) < 1e-10);
        assert_eq!(adapter.trainable_param_count(), 3 + 6);
    }

    #[test]
    fn zero_input_maps_to_zero() {
        let mut adapter = make_adapter(6, 4, 2, true, 3);
        randomize(&mut adapter, 4);
        let h = adapter.forward(&DenseMatrix::zeros(3, 6)).unwrap();
        assert_eq!(h.frobenius_norm(), 0.0);
    }

    #[test]
    fn factored_forward_matches_dense_materialization() {
        let mut adapter = make_adapter(9, 7, 4, true, 5);
        randomize(&mut adapter, 6);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let x = DenseMatrix::gaussian(6, 9, &mut rng);
        let h = adapter.forward(&x).unwrap();
        let dense = x.matmul(&adapter.merge().unwrap()).unwrap();
        assert!(rel_err(&h, &dense) < 1e-11);
    }

    #[test]
    fn cached_forward_is_bitwise_identical() {
        let mut adapter = make_adapter(8, 6, 3, true, 8);
        randomize(&mut adapter, 9);
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let x = DenseMatrix::gaussian(4, 8, &mut rng);
        let (xa, z) = adapter.compute_caches(&x).unwrap();
        let via_cache = adapter.forward_cached(&xa, &z).unwrap();
        let direct = adapter.forward(&x).unwrap();
        assert_eq!(via_cache.data(), direct.data());
    }

    #[test]
    fn merge_at_initialization_is_w_pre() {
        let adapter = make_adapter(12, 9, 4, false, 11);
        let merged = adapter.merge().unwrap();
        assert!(rel_err(&merged, &adapter.decomposition().w_pre()) < 1e-10);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_parameter_gradients() {
        let mut adapter = make_adapter(7, 5, 3, true, 12);
        randomize(&mut adapter, 13);
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        let x = DenseMatrix::gaussian(4, 7, &mut rng);
        let g = adapter.backward(&x, &DenseMatrix::zeros(4, 5)).unwrap();
        assert!(g.g_q.iter().all(|&v| v == 0.0));
        assert!(g.g_alpha.iter().all(|&v| v == 0.0));
        assert!(g.g_beta.iter().all(|&v| v == 0.0));
    }

    // Central-difference check of every parameter group against the loss
    // L = ½‖H‖²_F, whose upstream gradient is simply H.
    fn finite_difference_check(mut adapter: MoftAdapter, batch: usize, seed: u64) {
        randomize(&mut adapter, seed);
        let d = adapter.decomposition().d();
        let mut rng = ChaCha12Rng::seed_from_u64(seed + 1000);
        let x = DenseMatrix::gaussian(batch, d, &mut rng);
        let h = adapter.forward(&x).unwrap();
        let grads = adapter.backward(&x, &h).unwrap();
        let loss = |a: &MoftAdapter| -> f64 {
            let h = a.forward(&x).unwrap();
            0.5 * h.frobenius_norm().powi(2)
        };
        let step = 1e-6;
        let check = |analytic: f64, fd: f64, label: &str| {
            let denom = fd.abs().max(analytic.abs()).max(1e-8);
            let rel = (fd - analytic).abs() / denom;
            assert!(rel < 1e-5, "{label}: fd {fd:e} vs analytic {analytic:e}");
        };
        for k in 0..grads.g_q.len() {
            let mut plus = adapter.clone();
            plus.q_mut()[k] += step;
            let mut minus = adapter.clone();
            minus.q_mut()[k] -= step;
            check(grads.g_q[k], (loss(&plus) - loss(&minus)) / (2.0 * step), "q");
        }
        for k in 0..grads.g_alpha.len() {
            let mut plus = adapter.clone();
            plus.alpha_mut()[k] += step;
            let mut minus = adapter.clone();
            minus.alpha_mut()[k] -= step;
            check(
                grads.g_alpha[k],
                (loss(&plus) - loss(&minus)) / (2.0 * step),
                "alpha",
            );
        }
        for k in 0..grads.g_beta.len() {
            let mut plus = adapter.clone();
            plus.beta_mut()[k] += step;
            let mut minus = adapter.clone();
            minus.beta_mut()[k] -= step;
            check(
                grads.g_beta[k],
                (loss(&plus) - loss(&minus)) / (2.0 * step),
                "beta",
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences_tiny() {
        finite_difference_check(make_adapter(4, 3, 2, false, 20), 2, 21);
    }

    #[test]
    fn gradients_match_finite_differences_with_scaling_batch() {
        finite_difference_check(make_adapter(5, 4, 3, true, 22), 8, 23);
    }

    #[test]
    fn merged_weight_agrees_with_forward_on_fresh_batches() {
        let mut adapter = make_adapter(10, 7, 4, true, 30);
        randomize(&mut adapter, 31);
        let merged = adapter.merge().unwrap();
        for seed in 0..5 {
            let mut rng = ChaCha12Rng::seed_from_u64(100 + seed);
            let x = DenseMatrix::gaussian(6, 10, &mut rng);
            let h = adapter.forward(&x).unwrap();
            let dense = x.matmul(&merged).unwrap();
            assert!(rel_err(&h, &dense) < 1e-10);
        }
    }

    #[test]
    fn rejects_pissa_decompositions_and_bad_shapes() {
        let mut rng = ChaCha12Rng::seed_from_u64(40);
        let w = DenseMatrix::gaussian(8, 6, &mut rng);
        let pissa = decompose(&w, 3, Variant::Pissa, SvdMode::Exact).unwrap();
        assert!(matches!(
            MoftAdapter::new(pissa, true),
            Err(MoftError::InvalidInput(_))
        ));

        let adapter = make_adapter(8, 6, 3, true, 41);
        let x_bad = DenseMatrix::zeros(2, 7);
        assert!(matches!(
            adapter.forward(&x_bad),
            Err(MoftError::ShapeError(_))
        ));
        let x = DenseMatrix::zeros(2, 8);
        assert!(matches!(
            adapter.backward(&x, &DenseMatrix::zeros(2, 5)),
            Err(MoftError::ShapeError(_))
        ));

        let dec = decompose(&w, 3, Variant::Moft, SvdMode::Exact).unwrap();
        assert!(matches!(
            MoftAdapter::from_parts(dec.clone(), vec![0.0; 2], vec![1.0; 3], vec![1.0; 3], true),
            Err(MoftError::ShapeError(_))
        ));
        assert!(matches!(
            MoftAdapter::from_parts(
                dec,
                vec![0.0; 3],
                vec![f64::NAN, 1.0, 1.0],
                vec![1.0; 3],
                true
            ),
            Err(MoftError::InvalidInput(_))
        ));
    }

    #[test]
    fn round_trips_through_parts() {
        let mut adapter = make_adapter(9, 6, 3, true, 50);
        randomize(&mut adapter, 51);
        let rebuilt = MoftAdapter::from_parts(
            adapter.decomposition().clone(),
            adapter.cayley().q().to_vec(),
            adapter.alpha().to_vec(),
            adapter.beta().to_vec(),
            adapter.scaling_enabled(),
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(52);
        let x = DenseMatrix::gaussian(3, 9, &mut rng);
        assert_eq!(
            adapter.forward(&x).unwrap().data(),
            rebuilt.forward(&x).unwrap().data()
        );
    }
}
