//! Affine least-squares errors between representations and the rank /
//! singular-value bounds on them.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, FeatureMatrix};
use crate::metrics::matrix_entropy;

/// Singular values above `RANK_TOL * σ_max` count toward the numerical rank.
pub const RANK_TOL: f64 = 1e-10;
const CHECK_TOL: f64 = 1e-10;

pub fn numerical_rank(z: &DMatrix<f64>) -> Result<usize> {
    Ok(linalg::singular_values_of(z)?.numerical_rank(RANK_TOL))
}

fn center_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = m.column_mean();
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        col -= &mean;
    }
    out
}

/// Minimum-norm affine fit `target ≈ W input + b 1ᵀ`. Returns the Frobenius
/// residual and `W`.
fn affine_fit(target: &DMatrix<f64>, input: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let t = center_rows(target);
    let x = center_rows(input);
    let svd = linalg::thin_svd(&x.transpose())?;
    let sigma_max = svd.sigma.first().copied().unwrap_or(0.0);
    let kept: Vec<usize> = (0..svd.sigma.len())
        .filter(|&k| sigma_max > 0.0 && svd.sigma[k] > RANK_TOL * sigma_max)
        .collect();
    let w = if kept.is_empty() {
        DMatrix::zeros(t.nrows(), x.nrows())
    } else {
        let u = svd.u.select_columns(&kept);
        let v = svd.v.select_columns(&kept);
        let inv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            kept.len(),
            kept.iter().map(|&k| 1.0 / svd.sigma[k]),
        ));
        &t * u * inv * v.transpose()
    };
    let residual = (&t - &w * &x).norm();
    Ok((residual, w))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineErrors {
    pub y_from_z1: f64,
    pub y_from_z2: f64,
    pub z1_from_z2: f64,
    /// `‖W*₁‖_F` for the minimum-norm fit of `Y` on `Z1`
    pub w1_frobenius: f64,
}

impl AffineErrors {
    /// `err(Y|Z2) <= err(Y|Z1) + ‖W*₁‖_F err(Z1|Z2)`, with a small slack for
    /// rounding.
    pub fn transfer_bound_holds(&self) -> bool {
        let rhs = self.y_from_z1 + self.w1_frobenius * self.z1_from_z2;
        self.y_from_z2 <= rhs + CHECK_TOL * rhs.max(1.0)
    }
}

/// Minimum Frobenius errors of affine regressions between `d x N` inputs.
pub fn affine_regression_error(
    z1: &FeatureMatrix,
    z2: &FeatureMatrix,
    y: &FeatureMatrix,
) -> Result<AffineErrors> {
    let n = z1.len();
    for other in [z2.len(), y.len()] {
        if other != n {
            return Err(Error::DimensionMismatch(n, other));
        }
    }
    let (y_from_z1, w1) = affine_fit(y.data(), z1.data())?;
    let (y_from_z2, _) = affine_fit(y.data(), z2.data())?;
    let (z1_from_z2, _) = affine_fit(z1.data(), z2.data())?;
    Ok(AffineErrors {
        y_from_z1,
        y_from_z2,
        z1_from_z2,
        w1_frobenius: w1.norm(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankBound {
    pub rank1: usize,
    pub rank2: usize,
    /// `(1/N) min ‖Z1 - (H Z2 + η 1ᵀ)‖²_F`
    pub lhs: f64,
    /// `Σ_{j=rank2+2}^{rank1} σ_j²` of `Z1/√N`
    pub rhs_lemma2: f64,
    /// `(rank1 - rank2 - 1) / rank1`
    pub rhs_intermediate: f64,
    /// `1 - rank2/rank1`
    pub rhs_theorem: f64,
    pub lemma2_holds: bool,
    /// Only evaluated when every column of `Z1` has unit norm.
    pub theorem_holds: Option<bool>,
    pub rank_ratio: f64,
    /// `exp(H(G(Z2)) - H(G(Z1)))`, the entropy stand-in for `rank_ratio`
    pub entropy_surrogate: f64,
}

impl RankBound {
    pub fn holds(&self) -> bool {
        self.lemma2_holds && self.theorem_holds.unwrap_or(true)
    }
}

pub fn verify_rank_bound(z1: &FeatureMatrix, z2: &FeatureMatrix) -> Result<RankBound> {
    let n = z1.len();
    if z2.len() != n {
        return Err(Error::DimensionMismatch(n, z2.len()));
    }
    let rank1 = numerical_rank(z1.data())?;
    let rank2 = numerical_rank(z2.data())?;
    if rank1 <= rank2 {
        return Err(Error::RankOrderViolation { rank1, rank2 });
    }
    let (err, _) = affine_fit(z1.data(), z2.data())?;
    let lhs = err * err / n as f64;

    let sigma = linalg::singular_values_of(&(z1.data() / (n as f64).sqrt()))?;
    let rhs_lemma2: f64 = sigma
        .values()
        .iter()
        .take(rank1)
        .skip(rank2 + 1)
        .map(|s| s * s)
        .sum();
    let r1 = rank1 as f64;
    let r2 = rank2 as f64;
    let rhs_intermediate = (r1 - r2 - 1.0) / r1;
    let rhs_theorem = 1.0 - r2 / r1;

    let unit = z1
        .data()
        .column_iter()
        .all(|c| (c.norm() - 1.0).abs() <= 1e-9);
    let lemma2_holds = lhs >= rhs_lemma2 - CHECK_TOL * rhs_lemma2.max(1.0);
    let theorem_holds = unit.then_some(
        rhs_lemma2 <= rhs_intermediate + CHECK_TOL && rhs_intermediate <= rhs_theorem + CHECK_TOL,
    );

    let h1 = matrix_entropy(&linalg::gram(z1)?);
    let h2 = matrix_entropy(&linalg::gram(z2)?);
    Ok(RankBound {
        rank1,
        rank2,
        lhs,
        rhs_lemma2,
        rhs_intermediate,
        rhs_theorem,
        lemma2_holds,
        theorem_holds,
        rank_ratio: r2 / r1,
        entropy_surrogate: (h2 - h1).exp(),
    })
}

/// A seeded random instance for the regression bounds: `Z1` has 8 unit
/// columns of full rank 8, `Z2` has rank `1 + seed % 7`, and `Y` is a
/// generic 4-dimensional target, all over `N = 40` samples.
#[derive(Debug, Clone)]
pub struct LemmaInstance {
    pub z1: FeatureMatrix,
    pub z2: FeatureMatrix,
    pub y: FeatureMatrix,
}

pub fn lemma_instance(seed: u64) -> LemmaInstance {
    const N: usize = 40;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |r: usize, c: usize| -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng))
    };
    let (z1, _) =
        linalg::normalized_with_norms(&gauss(8, N)).expect("gaussian columns are nonzero");
    let rank2 = 1 + (seed % 7) as usize;
    let z2 = gauss(8, rank2) * gauss(rank2, N);
    let y = gauss(4, N);
    LemmaInstance {
        z1: FeatureMatrix::new(z1).expect("finite"),
        z2: FeatureMatrix::new(z2).expect("finite"),
        y: FeatureMatrix::new(y).expect("finite"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identical_inputs_have_zero_cross_error() {
        let inst = lemma_instance(3);
        let e = affine_regression_error(&inst.z1, &inst.z1, &inst.y).unwrap();
        assert!(e.z1_from_z2 < 1e-12);
        assert_relative_eq!(e.y_from_z1, e.y_from_z2, epsilon = 1e-12);
    }

    #[test]
    fn exact_affine_target_has_zero_error() {
        let inst = lemma_instance(4);
        let a = DMatrix::from_fn(3, 8, |i, j| (i as f64 - j as f64) * 0.3);
        let c = nalgebra::DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let mut y = &a * inst.z1.data();
        for mut col in y.column_iter_mut() {
            col += &c;
        }
        let y = FeatureMatrix::new(y).unwrap();
        let e = affine_regression_error(&inst.z1, &inst.z2, &y).unwrap();
        assert!(e.y_from_z1 < 1e-10);
    }

    #[test]
    fn rank_one_fit_beats_projection_onto_its_row() {
        for seed in [7, 49, 70] {
            let inst = lemma_instance(seed);
            let x = center_rows(inst.z2.data());
            let t = center_rows(inst.y.data());
            let r = x.row(0) / x.row(0).norm();
            let projected = (&t - (&t * r.transpose()) * &r).norm();
            let (residual, _) = affine_fit(inst.y.data(), inst.z2.data()).unwrap();
            assert_relative_eq!(residual, projected, max_relative = 1e-12);
        }
    }

    #[test]
    fn transfer_bound_on_seeded_instances() {
        for seed in 0..100 {
            let inst = lemma_instance(seed);
            let e = affine_regression_error(&inst.z1, &inst.z2, &inst.y).unwrap();
            assert!(e.transfer_bound_holds(), "seed {seed}: {e:?}");
        }
    }

    #[test]
    fn rank_chain_on_seeded_instances() {
        for seed in 0..100 {
            let inst = lemma_instance(seed);
            let b = verify_rank_bound(&inst.z1, &inst.z2).unwrap();
            assert_eq!(b.rank1, 8);
            assert_eq!(b.rank2, 1 + (seed % 7) as usize);
            assert!(b.holds(), "seed {seed}: {b:?}");
            assert_eq!(b.theorem_holds, Some(true));
        }
    }

    #[test]
    fn adjacent_ranks_give_empty_sum() {
        // seed % 7 == 6 gives rank(Z2) = 7 = rank(Z1) - 1
        let inst = lemma_instance(6);
        let b = verify_rank_bound(&inst.z1, &inst.z2).unwrap();
        assert_eq!((b.rank1, b.rank2), (8, 7));
        assert_eq!(b.rhs_lemma2, 0.0);
    }

    #[test]
    fn rank_order_violation() {
        let inst = lemma_instance(1);
        assert_eq!(
            verify_rank_bound(&inst.z2, &inst.z1).unwrap_err(),
            Error::RankOrderViolation { rank1: 2, rank2: 8 }
        );
    }

    #[test]
    fn non_unit_columns_skip_theorem() {
        let inst = lemma_instance(2);
        let scaled = FeatureMatrix::new(inst.z1.data() * 2.0).unwrap();
        let b = verify_rank_bound(&scaled, &inst.z2).unwrap();
        assert_eq!(b.theorem_holds, None);
        assert!(b.lemma2_holds);
    }
}
