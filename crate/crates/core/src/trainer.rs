//! Minibatch SGD for the MOFT adapter, plus a finite-difference gradient
//! auditor and a baseline comparison harness.
//!
//! The trainer freezes the decomposition once, precomputes the per-dataset
//! caches `X·A` and `X·W_res` (valid for the whole run because only `q`,
//! `α`, `β` move), and walks shuffled minibatches with a configurable
//! learning-rate schedule. Every step logs the full-train loss, the
//! held-out loss, and `‖RᵀR − I‖_F` — the rotation stays orthogonal to
//! machine precision by construction, and the log proves it.
//!
//! The loss is mean squared error over all output entries,
//! `L = ‖H − Y‖²_F / (batch·n)`, whose upstream gradient is
//! `2(H − Y)/(batch·n)`.
//!
//! The `pl-decay` schedule `η_k = (2k+1) / (2μ(k+1)²)` is the standard
//! step-size family for Polyak–Łojasiewicz objectives; with `μ = 1` it
//! starts at `1/2` and decays like `1/k`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::adapter::MoftAdapter;
use crate::baselines::{LoraAdapter, LoraXsAdapter};
use crate::error::{MoftError, Result};
use crate::matrix::{orthonormality_residual, DenseMatrix};
use crate::subspace::{decompose, SvdMode, Variant};
use crate::task::PlantedTask;

/// Learning-rate schedule, evaluated per optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum LrSchedule {
    /// Fixed step size.
    Constant(f64),
    /// `η_k = (2k+1) / (2μ(k+1)²)` for a PL constant `μ`.
    PlDecay { mu: f64 },
}

impl LrSchedule {
    /// Step size at 0-based step `k`.
    pub fn lr_at(&self, k: usize) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::PlDecay { mu } => {
                let kf = k as f64;
                (2.0 * kf + 1.0) / (2.0 * mu * (kf + 1.0) * (kf + 1.0))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            LrSchedule::Constant(lr) => ("learning rate", lr),
            LrSchedule::PlDecay { mu } => ("pl-decay mu", mu),
        };
        if !v.is_finite() || v <= 0.0 {
            return Err(MoftError::InvalidInput(format!(
                "{name} must be positive and finite, got {v}"
            )));
        }
        Ok(())
    }
}

/// Hyperparameters for one training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Adapter rank (may differ from the task's planted rank).
    pub rank: usize,
    pub lr: LrSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seed for the epoch shuffles.
    pub seed: u64,
    /// Whether `α`/`β` receive updates.
    pub scaling_enabled: bool,
}

/// One logged optimizer state: the initialization (step 0) or the state
/// after an update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistoryRow {
    pub step: usize,
    pub epoch: usize,
    /// MSE over the full training set.
    pub train_loss: f64,
    /// MSE over the held-out set.
    pub test_loss: f64,
    /// `‖RᵀR − I‖_F` of the current rotation.
    pub r_orth_residual: f64,
}

/// A trained adapter with its step-by-step log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub adapter: MoftAdapter,
    pub history: Vec<HistoryRow>,
}

/// Mean squared error over all entries.
///
/// # Errors
///
/// `ShapeError` if the shapes differ.
pub fn mse(h: &DenseMatrix, y: &DenseMatrix) -> Result<f64> {
    let diff = h.sub(y)?;
    let size = (diff.rows() * diff.cols()) as f64;
    Ok(diff.frobenius_norm().powi(2) / size)
}

fn gather_rows(m: &DenseMatrix, idx: &[usize]) -> DenseMatrix {
    DenseMatrix::from_fn(idx.len(), m.cols(), |i, j| m.get(idx[i], j))
}

fn check_divergence(loss: f64, limit: f64, step: usize) -> Result<()> {
    if !loss.is_finite() || loss > limit {
        return Err(MoftError::Diverged { step, loss, limit });
    }
    Ok(())
}

/// Trains a fresh MOFT adapter on a planted task.
///
/// Deterministic for a fixed `(task, cfg)`: the same inputs produce a
/// bitwise-identical history and adapter.
///
/// # Errors
///
/// `InvalidInput`/`InvalidRank` for bad hyperparameters, `Diverged` if the
/// training loss exceeds 10⁶ times its initial value.
pub fn train(task: &PlantedTask, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.lr.validate()?;
    if cfg.batch_size == 0 {
        return Err(MoftError::InvalidInput(
            "batch size must be at least 1".to_string(),
        ));
    }
    let dec = decompose(&task.w_pre, cfg.rank, Variant::Moft, SvdMode::Exact)?;
    let mut adapter = MoftAdapter::new(dec, cfg.scaling_enabled)?;

    let (xa_train, z_train) = adapter.compute_caches(&task.x_train)?;
    let (xa_test, z_test) = adapter.compute_caches(&task.x_test)?;
    let n_train = task.x_train.rows();

    let evaluate = |adapter: &MoftAdapter, step: usize, epoch: usize| -> Result<HistoryRow> {
        let train_loss = mse(&adapter.forward_cached(&xa_train, &z_train)?, &task.y_train)?;
        let test_loss = mse(&adapter.forward_cached(&xa_test, &z_test)?, &task.y_test)?;
        let r_orth_residual = orthonormality_residual(&adapter.rotation()?);
        Ok(HistoryRow {
            step,
            epoch,
            train_loss,
            test_loss,
            r_orth_residual,
        })
    };

    let mut history = Vec::new();
    let init = evaluate(&adapter, 0, 0)?;
    let limit = 1e6 * init.train_loss.max(1e-12);
    history.push(init);

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..n_train).collect();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        for chunk in indices.chunks(cfg.batch_size) {
            let xa = gather_rows(&xa_train, chunk);
            let z = gather_rows(&z_train, chunk);
            let y = gather_rows(&task.y_train, chunk);
            let h = adapter.forward_cached(&xa, &z)?;
            let scale = 2.0 / (chunk.len() * y.cols()) as f64;
            let grad_h = h.sub(&y)?.scale(scale);
            let grads = adapter.backward_cached(&xa, &grad_h)?;

            let lr = cfg.lr.lr_at(step);
            for (p, g) in adapter.q_mut().iter_mut().zip(&grads.g_q) {
                *p -= lr * g;
            }
            if cfg.scaling_enabled {
                for (p, g) in adapter.alpha_mut().iter_mut().zip(&grads.g_alpha) {
                    *p -= lr * g;
                }
                for (p, g) in adapter.beta_mut().iter_mut().zip(&grads.g_beta) {
                    *p -= lr * g;
                }
            }
            step += 1;

            let row = evaluate(&adapter, step, epoch)?;
            check_divergence(row.train_loss, limit, step)?;
            history.push(row);
        }
    }
    Ok(TrainOutcome { adapter, history })
}

/// Outcome of a finite-difference audit of the analytic gradients.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GradCheckReport {
    /// Worst relative error over the rotation coordinates.
    pub max_rel_q: f64,
    /// Worst relative error over `α`.
    pub max_rel_alpha: f64,
    /// Worst relative error over `β`.
    pub max_rel_beta: f64,
    /// All three maxima strictly below the tolerance.
    pub passes: bool,
}

/// Compares the analytic gradients against central differences on the MSE
/// loss for batch `x` with labels `y`.
///
/// All three groups are audited regardless of the adapter's scaling mode;
/// `passes` requires every relative error to be strictly below `tol`, so a
/// non-positive tolerance always fails.
pub fn grad_check(
    adapter: &MoftAdapter,
    x: &DenseMatrix,
    y: &DenseMatrix,
    tol: f64,
) -> Result<GradCheckReport> {
    let h = adapter.forward(x)?;
    let scale = 2.0 / (x.rows() * y.cols()) as f64;
    let grad_h = h.sub(y)?.scale(scale);
    let grads = adapter.backward(x, &grad_h)?;

    let loss = |a: &MoftAdapter| -> Result<f64> { mse(&a.forward(x)?, y) };
    let step = 1e-6;
    let rel = |analytic: f64, fd: f64| -> f64 {
        (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-8)
    };

    let mut max_rel_q = 0.0f64;
    for k in 0..grads.g_q.len() {
        let mut plus = adapter.clone();
        plus.q_mut()[k] += step;
        let mut minus = adapter.clone();
        minus.q_mut()[k] -= step;
        let fd = (loss(&plus)? - loss(&minus)?) / (2.0 * step);
        max_rel_q = max_rel_q.max(rel(grads.g_q[k], fd));
    }
    let mut max_rel_alpha = 0.0f64;
    for k in 0..grads.g_alpha.len() {
        let mut plus = adapter.clone();
        plus.alpha_mut()[k] += step;
        let mut minus = adapter.clone();
        minus.alpha_mut()[k] -= step;
        let fd = (loss(&plus)? - loss(&minus)?) / (2.0 * step);
        max_rel_alpha = max_rel_alpha.max(rel(grads.g_alpha[k], fd));
    }
    let mut max_rel_beta = 0.0f64;
    for k in 0..grads.g_beta.len() {
        let mut plus = adapter.clone();
        plus.beta_mut()[k] += step;
        let mut minus = adapter.clone();
        minus.beta_mut()[k] -= step;
        let fd = (loss(&plus)? - loss(&minus)?) / (2.0 * step);
        max_rel_beta = max_rel_beta.max(rel(grads.g_beta[k], fd));
    }
    let passes = max_rel_q < tol && max_rel_alpha < tol && max_rel_beta < tol;
    Ok(GradCheckReport {
        max_rel_q,
        max_rel_alpha,
        max_rel_beta,
        passes,
    })
}

/// One method's result in a baseline comparison.
#[derive(Debug, Clone, Serialize)]
pub struct BaselineRow {
    pub method: &'static str,
    pub trainable_params: u64,
    pub final_test_mse: f64,
    /// Test MSE divided by the label variance.
    pub relative_mse: f64,
}

/// Trains MOFT, LoRA, and LoRA-XS on the same task and reports final
/// held-out errors. Each method gets its own hyperparameters; the
/// baselines reuse the shuffle discipline of the main trainer.
pub fn compare_baselines(
    task: &PlantedTask,
    moft_cfg: &TrainConfig,
    lora_cfg: &TrainConfig,
    lora_xs_cfg: &TrainConfig,
) -> Result<Vec<BaselineRow>> {
    let variance = task.y_test_variance();
    let row = |method: &'static str, params: usize, test_mse: f64| BaselineRow {
        method,
        trainable_params: params as u64,
        final_test_mse: test_mse,
        relative_mse: test_mse / variance,
    };

    let moft = train(task, moft_cfg)?;
    let moft_mse = moft.history.last().expect("history never empty").test_loss;

    let lora_mse;
    let lora_params;
    {
        cfg_basics(lora_cfg)?;
        let mut adapter = LoraAdapter::new(&task.w_pre, lora_cfg.rank, lora_cfg.seed)?;
        lora_params = adapter.trainable_param_count();
        let z_train = adapter.compute_cache(&task.x_train)?;
        let init = mse(
            &adapter.forward_cached(&task.x_train, &z_train)?,
            &task.y_train,
        )?;
        let limit = 1e6 * init.max(1e-12);
        let mut rng = ChaCha12Rng::seed_from_u64(lora_cfg.seed);
        let mut indices: Vec<usize> = (0..task.x_train.rows()).collect();
        let mut step = 0usize;
        for _ in 0..lora_cfg.epochs {
            indices.shuffle(&mut rng);
            for chunk in indices.chunks(lora_cfg.batch_size) {
                let x = gather_rows(&task.x_train, chunk);
                let z = gather_rows(&z_train, chunk);
                let y = gather_rows(&task.y_train, chunk);
                let h = adapter.forward_cached(&x, &z)?;
                let scale = 2.0 / (chunk.len() * y.cols()) as f64;
                let grad_h = h.sub(&y)?.scale(scale);
                let (g_a, g_b) = adapter.backward(&x, &grad_h)?;
                adapter.apply_step(&g_a, &g_b, lora_cfg.lr.lr_at(step))?;
                step += 1;
                let full = mse(
                    &adapter.forward_cached(&task.x_train, &z_train)?,
                    &task.y_train,
                )?;
                check_divergence(full, limit, step)?;
            }
        }
        lora_mse = mse(&adapter.forward(&task.x_test)?, &task.y_test)?;
    }

    let xs_mse;
    let xs_params;
    {
        cfg_basics(lora_xs_cfg)?;
        let dec = decompose(&task.w_pre, lora_xs_cfg.rank, Variant::Moft, SvdMode::Exact)?;
        let mut adapter = LoraXsAdapter::new(dec)?;
        xs_params = adapter.trainable_param_count();
        let (xa_train, z_train) = adapter.compute_caches(&task.x_train)?;
        let init = mse(&adapter.forward_cached(&xa_train, &z_train)?, &task.y_train)?;
        let limit = 1e6 * init.max(1e-12);
        let mut rng = ChaCha12Rng::seed_from_u64(lora_xs_cfg.seed);
        let mut indices: Vec<usize> = (0..task.x_train.rows()).collect();
        let mut step = 0usize;
        for _ in 0..lora_xs_cfg.epochs {
            indices.shuffle(&mut rng);
            for chunk in indices.chunks(lora_xs_cfg.batch_size) {
                let xa = gather_rows(&xa_train, chunk);
                let z = gather_rows(&z_train, chunk);
                let y = gather_rows(&task.y_train, chunk);
                let h = adapter.forward_cached(&xa, &z)?;
                let scale = 2.0 / (chunk.len() * y.cols()) as f64;
                let grad_h = h.sub(&y)?.scale(scale);
                let g_m = adapter.backward_cached(&xa, &grad_h)?;
                adapter.apply_step(&g_m, lora_xs_cfg.lr.lr_at(step))?;
                step += 1;
                let full = mse(&adapter.forward_cached(&xa_train, &z_train)?, &task.y_train)?;
                check_divergence(full, limit, step)?;
            }
        }
        xs_mse = mse(&adapter.forward(&task.x_test)?, &task.y_test)?;
    }

    Ok(vec![
        row("moft", moft.adapter.trainable_param_count(), moft_mse),
        row("lora", lora_params, lora_mse),
        row("lora-xs", xs_params, xs_mse),
    ])
}

fn cfg_basics(cfg: &TrainConfig) -> Result<()> {
    cfg.lr.validate()?;
    if cfg.batch_size == 0 {
        return Err(MoftError::InvalidInput(
            "batch size must be at least 1".to_string(),
        ));
    }
    Ok(())
}
