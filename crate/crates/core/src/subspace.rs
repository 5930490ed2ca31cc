//! Principal/residual decomposition of a pre-trained weight matrix and the
//! full-space view of a subspace rotation.
//!
//! Given `W_pre` with SVD `U·diag(S)·Vᵀ`, the rank-`r` split keeps the top
//! singular directions as a trainable subspace and freezes the rest:
//!
//! - **MOFT variant:** `A = U[:, :r]` (orthonormal), `B = diag(S_r)·V_rᵀ`.
//!   All principal energy lives in `B`; `AᵀA = I` is what makes rotations
//!   angle-preserving downstream.
//! - **PISSA variant:** `A = U_r·√S_r`, `B = √S_r·V_rᵀ`. Energy is split
//!   across both factors, `AᵀA = diag(S_r)` — the counterexample variant
//!   that breaks angle preservation for non-trivial rotations.
//!
//! In both, `W_res` carries the remaining singular directions and
//! `A·B + W_res` reproduces `W_pre`.
//!
//! A rank-`r` rotation `R` applied in the subspace has an equivalent
//! full-space form `U_full·blkdiag(R, I_{d−r})·U_fullᵀ·W_pre`, where `U_full`
//! completes the left singular basis; [`embed_full_space`] materializes it
//! and is required to agree with [`reconstruct`] — an equivalence the test
//! suite exercises as a universally quantified property.

use serde::{Deserialize, Serialize};

use crate::error::{MoftError, Result};
use crate::matrix::{orthonormality_residual, DenseMatrix};
use crate::svd::{complete_left_basis, svd_exact, svd_randomized, SvdResult};

/// Which factor carries the principal energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Orthonormal `A`, energy in `B`. The angle-preserving split.
    Moft,
    /// `√S`-balanced factors. Breaks angle preservation under rotation.
    Pissa,
}

impl std::str::FromStr for Variant {
    type Err = MoftError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moft" => Ok(Variant::Moft),
            "pissa" => Ok(Variant::Pissa),
            other => Err(MoftError::InvalidInput(format!(
                "unknown variant '{other}', expected moft|pissa"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Moft => write!(f, "moft"),
            Variant::Pissa => write!(f, "pissa"),
        }
    }
}

/// How the SVD behind a decomposition is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SvdMode {
    /// One-sided Jacobi, full spectrum.
    Exact,
    /// Seeded randomized range finder with `n_iter` power iterations.
    Randomized { n_iter: usize, seed: u64 },
}

/// Frozen triple `(A, B, W_res)` of rank `r`.
#[derive(Debug, Clone)]
pub struct SubspaceDecomposition {
    a: DenseMatrix,     // d×r
    b: DenseMatrix,     // r×n
    w_res: DenseMatrix, // d×n
    r: usize,
    variant: Variant,
    rank_deficient: bool,
}

impl SubspaceDecomposition {
    /// Subspace basis factor, `d×r`.
    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    /// Principal-component factor, `r×n`.
    pub fn b(&self) -> &DenseMatrix {
        &self.b
    }

    /// Frozen residual, `d×n`.
    pub fn w_res(&self) -> &DenseMatrix {
        &self.w_res
    }

    /// Decomposition rank.
    pub fn rank(&self) -> usize {
        self.r
    }

    /// Which split produced this decomposition.
    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// True when the requested rank exceeded the numerical rank of the
    /// source matrix. A warning, not an error: training still works, the
    /// near-null rows of `B` are simply inert.
    pub fn rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    /// Input dimension `d`.
    pub fn d(&self) -> usize {
        self.a.rows()
    }

    /// Output dimension `n`.
    pub fn n(&self) -> usize {
        self.b.cols()
    }

    /// Materializes `A·B + W_res`, the decomposition's view of `W_pre`.
    pub fn w_pre(&self) -> DenseMatrix {
        self.a
            .matmul(&self.b)
            .and_then(|ab| ab.add(&self.w_res))
            .expect("internal shapes agree by construction")
    }
}

fn cols_range(m: &DenseMatrix, start: usize, end: usize) -> DenseMatrix {
    DenseMatrix::from_fn(m.rows(), end - start, |i, j| m.get(i, j + start))
}

/// Splits `w_pre` into a rank-`r` principal part and a frozen residual.
///
/// With `SvdMode::Exact` the residual is materialized from the trailing
/// singular triplets; with `SvdMode::Randomized` it is the exact complement
/// `W_pre − A·B`, so the reconstruction identity holds regardless of how
/// rough the randomized subspace is.
///
/// # Errors
///
/// `InvalidRank` if `r` is zero or exceeds `min(d, n)`; `InvalidInput` on
/// non-finite entries; `NumericalFailure` if the SVD fails to converge.
pub fn decompose(
    w_pre: &DenseMatrix,
    r: usize,
    variant: Variant,
    mode: SvdMode,
) -> Result<SubspaceDecomposition> {
    Ok(decompose_inner(w_pre, r, variant, mode)?.0)
}

/// Like [`decompose`], and also returns the completed `d×d` left singular
/// basis `U_full` from the *same* SVD, for [`embed_full_space`]. Reusing the
/// factorization keeps the sign convention consistent between the two views.
pub fn decompose_full(
    w_pre: &DenseMatrix,
    r: usize,
    variant: Variant,
    mode: SvdMode,
) -> Result<(SubspaceDecomposition, DenseMatrix)> {
    let (dec, svd) = decompose_inner(w_pre, r, variant, mode)?;
    let u_full = complete_left_basis(&svd.u)?;
    Ok((dec, u_full))
}

fn decompose_inner(
    w_pre: &DenseMatrix,
    r: usize,
    variant: Variant,
    mode: SvdMode,
) -> Result<(SubspaceDecomposition, SvdResult)> {
    let (d, n) = w_pre.shape();
    let k = d.min(n);
    if r == 0 || r > k {
        return Err(MoftError::InvalidRank(format!(
            "rank {r} out of range for a {d}x{n} matrix"
        )));
    }
    let svd = match mode {
        SvdMode::Exact => svd_exact(w_pre)?,
        SvdMode::Randomized { n_iter, seed } => svd_randomized(w_pre, r, n_iter, seed)?,
    };
    let s_r = &svd.s[..r];
    let u_r = cols_range(&svd.u, 0, r);
    let vt_r = cols_range(&svd.v, 0, r).transpose(); // r×n

    let (a, b) = match variant {
        Variant::Moft => (u_r, vt_r.scale_rows(s_r)?),
        Variant::Pissa => {
            let sqrt_s: Vec<f64> = s_r.iter().map(|s| s.sqrt()).collect();
            (u_r.scale_columns(&sqrt_s)?, vt_r.scale_rows(&sqrt_s)?)
        }
    };

    let w_res = match mode {
        SvdMode::Exact => {
            if r == svd.s.len() {
                DenseMatrix::zeros(d, n)
            } else {
                let u_tail = cols_range(&svd.u, r, svd.s.len());
                let v_tail = cols_range(&svd.v, r, svd.s.len());
                u_tail
                    .scale_columns(&svd.s[r..])?
                    .matmul(&v_tail.transpose())?
            }
        }
        SvdMode::Randomized { .. } => w_pre.sub(&a.matmul(&b)?)?,
    };

    let rank_deficient = svd.s[0] == 0.0 || svd.s[r - 1] <= 1e-10 * svd.s[0];
    Ok((
        SubspaceDecomposition {
            a,
            b,
            w_res,
            r,
            variant,
            rank_deficient,
        },
        svd,
    ))
}

/// Applies a subspace rotation: `A·R·B + W_res`.
///
/// # Errors
///
/// `ShapeError` if `R` is not `r×r`.
pub fn reconstruct(dec: &SubspaceDecomposition, rot: &DenseMatrix) -> Result<DenseMatrix> {
    if rot.shape() != (dec.r, dec.r) {
        return Err(MoftError::ShapeError(format!(
            "rotation must be {}x{}, got {}x{}",
            dec.r,
            dec.r,
            rot.rows(),
            rot.cols()
        )));
    }
    dec.a.matmul(rot)?.matmul(&dec.b)?.add(&dec.w_res)
}

/// The full-space form of a subspace rotation:
/// `U_full·blkdiag(R, I_{d−r})·U_fullᵀ·W_pre`.
///
/// Must agree with [`reconstruct`] to within `1e-9·‖W_pre‖_F`; `U_full` has
/// to come from the same factorization as `dec` (see [`decompose_full`]) or
/// the sign conventions drift apart.
///
/// # Errors
///
/// `InvalidInput` unless `dec` is the MOFT variant; `ShapeError` on wrong
/// shapes; `InvalidBasis` if `U_full` is not orthonormal.
pub fn embed_full_space(
    dec: &SubspaceDecomposition,
    rot: &DenseMatrix,
    u_full: &DenseMatrix,
) -> Result<DenseMatrix> {
    if dec.variant != Variant::Moft {
        return Err(MoftError::InvalidInput(
            "full-space embedding is defined for the MOFT variant only".to_string(),
        ));
    }
    let d = dec.d();
    if rot.shape() != (dec.r, dec.r) {
        return Err(MoftError::ShapeError(format!(
            "rotation must be {}x{}, got {}x{}",
            dec.r,
            dec.r,
            rot.rows(),
            rot.cols()
        )));
    }
    if u_full.shape() != (d, d) {
        return Err(MoftError::ShapeError(format!(
            "U_full must be {d}x{d}, got {}x{}",
            u_full.rows(),
            u_full.cols()
        )));
    }
    let residual = orthonormality_residual(u_full);
    if residual > 1e-8 {
        return Err(MoftError::InvalidBasis(format!(
            "U_full not orthonormal (residual {residual:e})"
        )));
    }
    let r = dec.r;
    let block = DenseMatrix::from_fn(d, d, |i, j| {
        if i < r && j < r {
            rot.get(i, j)
        } else if i == j {
            1.0
        } else {
            0.0
        }
    });
    u_full
        .matmul(&block)?
        .matmul(&u_full.transpose())?
        .matmul(&dec.w_pre())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solve::qr_thin_q;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn random_orthogonal(r: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        qr_thin_q(&DenseMatrix::gaussian(r, r, &mut rng)).unwrap()
    }

    fn rel_err(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(1e-300)
    }

    #[test]
    fn identity_input_splits_exactly() {
        let w = DenseMatrix::identity(4);
        let dec = decompose(&w, 2, Variant::Moft, SvdMode::Exact).unwrap();
        let gram = dec.a().transpose().matmul(dec.a()).unwrap();
        assert!(gram.max_abs_diff(&DenseMatrix::identity(2)).unwrap() < 1e-12);
        let back = dec.a().matmul(dec.b()).unwrap().add(dec.w_res()).unwrap();
        assert!(back.max_abs_diff(&w).unwrap() < 1e-12);
    }

    #[test]
    fn moft_basis_is_orthonormal() {
        let mut rng = ChaCha12Rng::seed_from_u64(16);
        let w = DenseMatrix::gaussian(16, 16, &mut rng);
        let dec = decompose(&w, 4, Variant::Moft, SvdMode::Exact).unwrap();
        assert!(orthonormality_residual(dec.a()) < 1e-10);
        assert!(!dec.rank_deficient());
    }

    #[test]
    fn pissa_gram_matrix_is_the_top_singular_values() {
        let mut rng = ChaCha12Rng::seed_from_u64(16);
        let w = DenseMatrix::gaussian(16, 16, &mut rng);
        let svd = svd_exact(&w).unwrap();
        let dec = decompose(&w, 4, Variant::Pissa, SvdMode::Exact).unwrap();
        let gram = dec.a().transpose().matmul(dec.a()).unwrap();
        let expected = DenseMatrix::from_fn(4, 4, |i, j| if i == j { svd.s[i] } else { 0.0 });
        assert!(gram.max_abs_diff(&expected).unwrap() < 1e-8);
    }

    #[test]
    fn identity_rotation_recovers_w_pre_for_all_ranks_and_variants() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let w = DenseMatrix::gaussian(10, 7, &mut rng);
        for variant in [Variant::Moft, Variant::Pissa] {
            for r in [1, 3, 7] {
                let dec = decompose(&w, r, variant, SvdMode::Exact).unwrap();
                let back = reconstruct(&dec, &DenseMatrix::identity(r)).unwrap();
                assert!(
                    rel_err(&back, &w) < 1e-10,
                    "variant {variant}, rank {r}: {:e}",
                    rel_err(&back, &w)
                );
            }
        }
    }

    #[test]
    fn randomized_mode_reconstructs_exactly_through_the_complement() {
        let mut rng = ChaCha12Rng::seed_from_u64(61);
        let w = DenseMatrix::gaussian(14, 9, &mut rng);
        let mode = SvdMode::Randomized { n_iter: 10, seed: 5 };
        let dec = decompose(&w, 3, Variant::Moft, mode).unwrap();
        let back = reconstruct(&dec, &DenseMatrix::identity(3)).unwrap();
        assert!(rel_err(&back, &w) < 1e-12);
        assert!(orthonormality_residual(dec.a()) < 1e-10);
    }

    #[test]
    fn full_rank_split_has_zero_residual() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let w = DenseMatrix::gaussian(6, 6, &mut rng);
        let dec = decompose(&w, 6, Variant::Moft, SvdMode::Exact).unwrap();
        assert_eq!(dec.w_res().frobenius_norm(), 0.0);
        // Dense oracle: A·R·B computed as U·R·diag(S)·Vᵀ straight from the SVD.
        let rot = random_orthogonal(6, 77);
        let svd = svd_exact(&w).unwrap();
        let oracle = svd
            .u
            .matmul(&rot)
            .unwrap()
            .scale_columns(&svd.s)
            .unwrap()
            .matmul(&svd.v.transpose())
            .unwrap();
        let got = reconstruct(&dec, &rot).unwrap();
        assert!(rel_err(&got, &oracle) < 1e-10);
    }

    #[test]
    fn rejects_out_of_range_ranks() {
        let w = DenseMatrix::identity(5);
        assert!(matches!(
            decompose(&w, 0, Variant::Moft, SvdMode::Exact),
            Err(MoftError::InvalidRank(_))
        ));
        assert!(matches!(
            decompose(&w, 6, Variant::Moft, SvdMode::Exact),
            Err(MoftError::InvalidRank(_))
        ));
    }

    #[test]
    fn rank_deficiency_is_flagged_not_fatal() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let thin = DenseMatrix::gaussian(8, 2, &mut rng);
        let wide = DenseMatrix::gaussian(2, 7, &mut rng);
        let low_rank = thin.matmul(&wide).unwrap();
        let deficient = decompose(&low_rank, 4, Variant::Moft, SvdMode::Exact).unwrap();
        assert!(deficient.rank_deficient());
        assert!(orthonormality_residual(deficient.a()) < 1e-10);
        let fine = decompose(&low_rank, 2, Variant::Moft, SvdMode::Exact).unwrap();
        assert!(!fine.rank_deficient());
    }

    #[test]
    fn embedding_with_identity_rotation_returns_w_pre() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let w = DenseMatrix::gaussian(9, 6, &mut rng);
        let (dec, u_full) = decompose_full(&w, 3, Variant::Moft, SvdMode::Exact).unwrap();
        let out = embed_full_space(&dec, &DenseMatrix::identity(3), &u_full).unwrap();
        assert!(rel_err(&out, &w) < 1e-10);
    }

    #[test]
    fn embedding_matches_reconstruct_on_seeded_instance() {
        let mut rng = ChaCha12Rng::seed_from_u64(120);
        let w = DenseMatrix::gaussian(12, 10, &mut rng);
        let (dec, u_full) = decompose_full(&w, 3, Variant::Moft, SvdMode::Exact).unwrap();
        let rot = random_orthogonal(3, 8);
        let embedded = embed_full_space(&dec, &rot, &u_full).unwrap();
        let direct = reconstruct(&dec, &rot).unwrap();
        let diff = embedded.sub(&direct).unwrap().frobenius_norm();
        assert!(diff <= 1e-9 * w.frobenius_norm());
    }

    #[test]
    fn embedding_matches_reconstruct_at_full_rank_square() {
        let mut rng = ChaCha12Rng::seed_from_u64(121);
        let w = DenseMatrix::gaussian(7, 7, &mut rng);
        let (dec, u_full) = decompose_full(&w, 7, Variant::Moft, SvdMode::Exact).unwrap();
        let rot = random_orthogonal(7, 9);
        let embedded = embed_full_space(&dec, &rot, &u_full).unwrap();
        let direct = reconstruct(&dec, &rot).unwrap();
        assert!(embedded.sub(&direct).unwrap().frobenius_norm() <= 1e-9 * w.frobenius_norm());
        assert_eq!(dec.w_res().frobenius_norm(), 0.0);
    }

    #[test]
    fn embedding_rejects_bad_inputs() {
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        let w = DenseMatrix::gaussian(8, 5, &mut rng);
        let (dec, u_full) = decompose_full(&w, 2, Variant::Moft, SvdMode::Exact).unwrap();
        let rot = random_orthogonal(2, 1);

        let junk = DenseMatrix::gaussian(8, 8, &mut rng);
        assert!(matches!(
            embed_full_space(&dec, &rot, &junk),
            Err(MoftError::InvalidBasis(_))
        ));

        let pissa = decompose(&w, 2, Variant::Pissa, SvdMode::Exact).unwrap();
        assert!(matches!(
            embed_full_space(&pissa, &rot, &u_full),
            Err(MoftError::InvalidInput(_))
        ));

        assert!(matches!(
            reconstruct(&dec, &DenseMatrix::identity(3)),
            Err(MoftError::ShapeError(_))
        ));
    }

    #[test]
    fn principal_part_dominates_residual_when_spectrum_concentrates() {
        // Singular values 1, 1/2, 1/4, …: the top two carry well over half
        // the spectral energy, so ‖A·B‖_F must exceed ‖W_res‖_F.
        let mut rng = ChaCha12Rng::seed_from_u64(90);
        let qa = qr_thin_q(&DenseMatrix::gaussian(9, 6, &mut rng)).unwrap();
        let qb = qr_thin_q(&DenseMatrix::gaussian(8, 6, &mut rng)).unwrap();
        let sigmas: Vec<f64> = (0..6).map(|i| 0.5f64.powi(i)).collect();
        let w = qa
            .scale_columns(&sigmas)
            .unwrap()
            .matmul(&qb.transpose())
            .unwrap();
        let dec = decompose(&w, 2, Variant::Moft, SvdMode::Exact).unwrap();
        let ab_norm = dec.a().matmul(dec.b()).unwrap().frobenius_norm();
        assert!(ab_norm >= dec.w_res().frobenius_norm());
    }
}
