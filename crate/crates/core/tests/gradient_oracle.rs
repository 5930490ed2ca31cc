//! Finite-difference audit of the adapter's analytic gradients across a
//! spread of shapes, ranks, and scaling settings, covering both the plain
//! forward path and the cached-projection path.

use moft_core::matrix::DenseMatrix;
use moft_core::subspace::decompose;
use moft_core::trainer::{grad_check, mse};
use moft_core::{MoftAdapter, SvdMode, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Builds an adapter at a random (non-identity) parameter point so the
/// audit exercises generic positions, not just the well-behaved origin.
fn random_adapter(
    d: usize,
    n: usize,
    r: usize,
    scaling: bool,
    rng: &mut ChaCha12Rng,
) -> MoftAdapter {
    let w = DenseMatrix::gaussian(d, n, rng);
    let dec = decompose(&w, r, Variant::Moft, SvdMode::Exact).unwrap();
    let mut adapter = MoftAdapter::new(dec, scaling).unwrap();
    for q in adapter.q_mut() {
        *q = 0.4 * rng.random::<f64>() - 0.2;
    }
    if scaling {
        for a in adapter.alpha_mut() {
            *a = 0.5 + rng.random::<f64>();
        }
        for b in adapter.beta_mut() {
            *b = 0.5 + rng.random::<f64>();
        }
    }
    adapter
}

#[test]
fn analytic_gradients_match_central_differences_everywhere() {
    // ≥20 configurations, dimensions capped at 32 and rank at 8 so the
    // finite-difference sweep stays tractable.
    let configs: [(usize, usize, usize, usize, bool); 20] = [
        (4, 3, 2, 2, false),
        (4, 3, 2, 2, true),
        (5, 5, 3, 4, false),
        (5, 5, 3, 4, true),
        (8, 6, 4, 3, false),
        (8, 6, 4, 3, true),
        (6, 10, 4, 5, true),
        (10, 6, 5, 5, false),
        (12, 12, 6, 4, true),
        (12, 9, 3, 8, false),
        (16, 8, 8, 4, true),
        (8, 16, 8, 4, false),
        (16, 16, 7, 6, true),
        (20, 12, 5, 3, false),
        (24, 16, 6, 2, true),
        (24, 24, 8, 4, false),
        (32, 8, 8, 3, true),
        (8, 32, 8, 3, false),
        (32, 24, 7, 2, true),
        (32, 32, 8, 2, false),
    ];
    for (which, &(d, n, r, batch, scaling)) in configs.iter().enumerate() {
        let mut rng = ChaCha12Rng::seed_from_u64(5000 + which as u64);
        let adapter = random_adapter(d, n, r, scaling, &mut rng);
        let x = DenseMatrix::gaussian(batch, d, &mut rng);
        let y = DenseMatrix::gaussian(batch, n, &mut rng);
        let report = grad_check(&adapter, &x, &y, 1e-5).unwrap();
        assert!(
            report.passes,
            "config {which} ({d}x{n} rank {r} scaling {scaling}): \
             q {:.2e}, alpha {:.2e}, beta {:.2e}",
            report.max_rel_q, report.max_rel_alpha, report.max_rel_beta
        );
    }
}

#[test]
fn cached_projection_path_reproduces_the_plain_path_exactly() {
    // The audited gradients above flow through the plain forward; this pins
    // the cached path to the same numbers, bit for bit, on every config.
    let configs: [(usize, usize, usize, usize, bool); 6] = [
        (4, 3, 2, 2, false),
        (8, 6, 4, 3, true),
        (12, 12, 6, 4, true),
        (16, 8, 8, 4, false),
        (24, 16, 6, 2, true),
        (32, 32, 8, 2, false),
    ];
    for (which, &(d, n, r, batch, scaling)) in configs.iter().enumerate() {
        let mut rng = ChaCha12Rng::seed_from_u64(6000 + which as u64);
        let adapter = random_adapter(d, n, r, scaling, &mut rng);
        let x = DenseMatrix::gaussian(batch, d, &mut rng);
        let y = DenseMatrix::gaussian(batch, n, &mut rng);

        let (xa, z) = adapter.compute_caches(&x).unwrap();
        let h_plain = adapter.forward(&x).unwrap();
        let h_cached = adapter.forward_cached(&xa, &z).unwrap();
        assert_eq!(h_plain.data(), h_cached.data(), "config {which} forward");
        // Losses agree, so one shared upstream gradient serves both paths.
        assert_eq!(
            mse(&h_plain, &y).unwrap(),
            mse(&h_cached, &y).unwrap(),
            "config {which} loss"
        );

        let scale = 2.0 / (batch * n) as f64;
        let grad_h = h_plain.sub(&y).unwrap().scale(scale);
        let plain = adapter.backward(&x, &grad_h).unwrap();
        let cached = adapter.backward_cached(&xa, &grad_h).unwrap();
        assert_eq!(plain.g_q, cached.g_q, "config {which} rotation gradient");
        assert_eq!(plain.g_alpha, cached.g_alpha, "config {which} alpha");
        assert_eq!(plain.g_beta, cached.g_beta, "config {which} beta");
    }
}
