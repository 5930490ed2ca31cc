//! Planted regression tasks with a known-optimal adapter.
//!
//! Each task draws a synthetic pre-trained weight `W_pre`, plants a target
//! map `W_target` reachable by a chosen adapter family, and samples train
//! and test batches with labels `Y = X·W_target`. Because the optimum is
//! planted, convergence claims become checkable: a correct trainer must
//! drive the test error to (numerical) zero.
//!
//! Three families:
//!
//! - [`TaskKind::Rotation`]: `W_target = A·diag(α*)·R*·diag(β*)·B + W_res`
//!   for a drawn Cayley rotation `R*` (kept at least 0.1 away from the
//!   identity in Frobenius norm) and, optionally, planted scales in
//!   `[0.5, 1.5]` — exactly realizable by a MOFT adapter of the same rank.
//! - [`TaskKind::AdditiveLowRank`]: `W_target = W_pre + P·Qᵀ` with a rank-
//!   `r★` Gaussian update — exactly realizable by LoRA, not by a rotation.
//! - [`TaskKind::ZeroDelta`]: `W_target = W_pre` — every adapter's
//!   initialization is already optimal; a sanity probe for regressions
//!   that move away from a perfect start.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::adapter::MoftAdapter;
use crate::cayley::{cayley_forward, CayleyParams};
use crate::error::{MoftError, Result};
use crate::matrix::DenseMatrix;
use crate::subspace::{decompose, SvdMode, Variant};

/// Training samples drawn per task.
pub const N_TRAIN: usize = 256;
/// Held-out samples drawn per task.
pub const N_TEST: usize = 64;

/// Which adapter family can exactly represent the planted target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Subspace rotation, optionally with planted diagonal scales.
    Rotation { scaling: bool },
    /// Additive Gaussian update of rank `r★`.
    AdditiveLowRank,
    /// No update at all; the pre-trained map is the target.
    ZeroDelta,
}

/// A synthetic task instance with its planted solution.
#[derive(Debug, Clone)]
pub struct PlantedTask {
    pub w_pre: DenseMatrix,
    pub w_target: DenseMatrix,
    pub x_train: DenseMatrix,
    pub y_train: DenseMatrix,
    pub x_test: DenseMatrix,
    pub y_test: DenseMatrix,
    /// Rank of the planted structure.
    pub r_star: usize,
    pub kind: TaskKind,
    /// Planted Cayley coordinates (rotation tasks only).
    pub q_star: Option<Vec<f64>>,
    /// Planted input-side scales (rotation tasks with scaling).
    pub alpha_star: Option<Vec<f64>>,
    /// Planted output-side scales (rotation tasks with scaling).
    pub beta_star: Option<Vec<f64>>,
}

impl PlantedTask {
    /// Population variance of the held-out labels, for relative errors.
    pub fn y_test_variance(&self) -> f64 {
        let data = self.y_test.data();
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        data.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / data.len() as f64
    }
}

/// Generates a rotation task; see [`generate_task_kind`].
pub fn generate_task(
    d: usize,
    n: usize,
    r_star: usize,
    scaling: bool,
    seed: u64,
) -> Result<PlantedTask> {
    generate_task_kind(d, n, r_star, TaskKind::Rotation { scaling }, seed)
}

/// Generates a seeded task of the given kind.
///
/// # Errors
///
/// `InvalidInput` if `r_star` is zero, or 1 for a rotation task (a 1×1
/// rotation is always the identity, so no planted rotation can be at least
/// 0.1 from it); `InvalidRank` if `r_star` exceeds `min(d, n)`.
pub fn generate_task_kind(
    d: usize,
    n: usize,
    r_star: usize,
    kind: TaskKind,
    seed: u64,
) -> Result<PlantedTask> {
    if r_star == 0 {
        return Err(MoftError::InvalidInput(
            "planted rank must be at least 1".to_string(),
        ));
    }
    if r_star > d.min(n) {
        return Err(MoftError::InvalidRank(format!(
            "planted rank {r_star} exceeds min({d}, {n})"
        )));
    }
    if matches!(kind, TaskKind::Rotation { .. }) && r_star < 2 {
        return Err(MoftError::InvalidInput(
            "rotation tasks need a planted rank of at least 2".to_string(),
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let w_pre = DenseMatrix::gaussian(d, n, &mut rng);

    let (w_target, q_star, alpha_star, beta_star) = match kind {
        TaskKind::Rotation { scaling } => {
            let dec = decompose(&w_pre, r_star, Variant::Moft, SvdMode::Exact)?;
            let q_star = loop {
                let candidate = CayleyParams::random(r_star, 0.5, &mut rng)?;
                let rot = cayley_forward(&candidate)?;
                let dist = rot
                    .sub(&DenseMatrix::identity(r_star))?
                    .frobenius_norm();
                if dist > 0.1 {
                    break candidate;
                }
            };
            let uniform = |rng: &mut ChaCha12Rng| 0.5 + rand::Rng::random::<f64>(rng);
            let (alpha, beta) = if scaling {
                (
                    (0..r_star).map(|_| uniform(&mut rng)).collect::<Vec<f64>>(),
                    (0..r_star).map(|_| uniform(&mut rng)).collect::<Vec<f64>>(),
                )
            } else {
                (vec![1.0; r_star], vec![1.0; r_star])
            };
            let planted = MoftAdapter::from_parts(
                dec,
                q_star.q().to_vec(),
                alpha.clone(),
                beta.clone(),
                scaling,
            )?;
            let target = planted.merge()?;
            let scales = if scaling {
                (Some(alpha), Some(beta))
            } else {
                (None, None)
            };
            (target, Some(q_star.q().to_vec()), scales.0, scales.1)
        }
        TaskKind::AdditiveLowRank => {
            let p = DenseMatrix::gaussian(d, r_star, &mut rng).scale(1.0 / (d as f64).sqrt());
            let q = DenseMatrix::gaussian(n, r_star, &mut rng).scale(1.0 / (n as f64).sqrt());
            let target = w_pre.add(&p.matmul(&q.transpose())?)?;
            (target, None, None, None)
        }
        TaskKind::ZeroDelta => (w_pre.clone(), None, None, None),
    };

    let x_train = DenseMatrix::gaussian(N_TRAIN, d, &mut rng);
    let y_train = x_train.matmul(&w_target)?;
    let x_test = DenseMatrix::gaussian(N_TEST, d, &mut rng);
    let y_test = x_test.matmul(&w_target)?;

    Ok(PlantedTask {
        w_pre,
        w_target,
        x_train,
        y_train,
        x_test,
        y_test,
        r_star,
        kind,
        q_star,
        alpha_star,
        beta_star,
    })
}
