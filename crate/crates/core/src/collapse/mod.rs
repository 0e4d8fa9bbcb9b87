//! Neural-collapse reference geometry and residual checks.
//!
//! Closed forms for an equi-correlated family `E(α) = (1-α) I + α 11ᵀ`
//! (eigenvalues `1-α` with multiplicity `C-1` and `1+(C-1)α`) give the
//! entropy, MIR and HDR targets that a collapsed classifier reaches.

mod regression;

pub use regression::{
    affine_regression_error, lemma_instance, numerical_rank, verify_rank_bound, AffineErrors,
    LemmaInstance, RankBound, RANK_TOL,
};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, FeatureMatrix, GramMatrix};
use crate::metrics::EntropyTriple;

/// Random `rows x cols` matrix with orthonormal columns (`rows >= cols`).
pub fn random_orthonormal(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng));
    g.qr().q()
}

/// `C` unit vectors in `R^d` with pairwise cosine `-1/(C-1)`, as the columns
/// of a `d x C` matrix.
///
/// The centered basis vectors `e_c - 1/C` are written in a Helmert basis of
/// the sum-zero subspace and mapped into `R^d` by a seeded orthonormal frame.
pub fn simplex_etf(classes: usize, dim: usize, seed: u64) -> Result<FeatureMatrix> {
    if classes < 2 {
        return Err(Error::TooFewClasses(classes));
    }
    let k = classes - 1;
    if dim < k {
        return Err(Error::DimensionTooSmall { dim, needed: k });
    }
    // row c of the Helmert matrix holds the coordinates of e_c - 1/C
    let coords = DMatrix::from_fn(k, classes, |j, c| {
        let j1 = (j + 1) as f64;
        let scale = 1.0 / (j1 * (j1 + 1.0)).sqrt();
        if c <= j {
            scale
        } else if c == j + 1 {
            -j1 * scale
        } else {
            0.0
        }
    });
    let frame = random_orthonormal(dim, k, seed);
    let (means, _) = linalg::normalized_with_norms(&(frame * coords))?;
    FeatureMatrix::new(means)
}

/// `E(α)` on `C` classes, validated as a Gram matrix.
pub fn structure_matrix(alpha: f64, classes: usize) -> Result<GramMatrix> {
    if classes == 0 {
        return Err(Error::EmptyMatrix { rows: 0, cols: 0 });
    }
    let top = 1.0 + (classes as f64 - 1.0) * alpha;
    if top < linalg::PSD_FLOOR || (classes > 1 && 1.0 - alpha < linalg::PSD_FLOOR) {
        return Err(Error::NotPsd { alpha, classes });
    }
    let m = DMatrix::from_fn(classes, classes, |i, j| if i == j { 1.0 } else { alpha });
    GramMatrix::new(m)
}

/// Closed-form spectrum of `E(α)`, descending.
pub fn structure_spectrum(alpha: f64, classes: usize) -> Vec<f64> {
    let mut v = vec![1.0 - alpha; classes.saturating_sub(1)];
    v.push(1.0 + (classes as f64 - 1.0) * alpha);
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Values a collapsed `C`-class model attains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NcTargets {
    pub mir: f64,
    pub hdr: f64,
    /// `log(C-1)`, in nats
    pub entropy: f64,
}

/// `MIR = 1/(C-1) + (C-2) log(C-2) / ((C-1) log(C-1))`, `HDR = 0`,
/// `H = log(C-1)`.
pub fn nc_targets(classes: usize) -> Result<NcTargets> {
    if classes < 3 {
        return Err(Error::DegenerateClassCount(classes));
    }
    let c1 = (classes - 1) as f64;
    let c2 = (classes - 2) as f64;
    // 0 log 0 never occurs here, but log(1) = 0 does at C = 3
    let mir = 1.0 / c1 + c2 * c2.ln() / (c1 * c1.ln());
    Ok(NcTargets {
        mir,
        hdr: 0.0,
        entropy: c1.ln(),
    })
}

/// Global and per-class means of labeled features.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStatistics {
    pub global_mean: DVector<f64>,
    /// `d x C`
    pub class_means: DMatrix<f64>,
    /// `class_means - global_mean`, column-wise (`M`)
    pub centered_means: DMatrix<f64>,
    pub counts: Vec<usize>,
}

impl ClassStatistics {
    pub fn new(features: &FeatureMatrix, classes: usize) -> Result<Self> {
        let labels = features.require_labels()?;
        if classes < 2 {
            return Err(Error::TooFewClasses(classes));
        }
        let z = features.data();
        let d = z.nrows();
        let mut sums = DMatrix::zeros(d, classes);
        let mut counts = vec![0usize; classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(Error::LabelOutOfRange {
                    index: i,
                    label: y,
                    classes,
                });
            }
            let mut col = sums.column_mut(y);
            col += z.column(i);
            counts[y] += 1;
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::MissingClass(c));
        }
        let global_mean = z.column_sum() / z.ncols() as f64;
        let mut class_means = sums;
        for (c, mut col) in class_means.column_iter_mut().enumerate() {
            col /= counts[c] as f64;
        }
        let mut centered_means = class_means.clone();
        for mut col in centered_means.column_iter_mut() {
            col -= &global_mean;
        }
        Ok(Self {
            global_mean,
            class_means,
            centered_means,
            counts,
        })
    }
}

/// Residuals of the three collapse conditions plus the observed sample-level
/// MIR/HDR between features and their class weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcReport {
    pub classes: usize,
    /// mean `‖h_i - μ_{y_i}‖`
    pub nc1_residual: f64,
    /// max `|cos(μ̃_i, μ̃_j) - (C/(C-1)) δ_ij + 1/(C-1)|`
    pub nc2_residual: f64,
    /// `‖W/‖W‖_F - M/‖M‖_F‖_F`
    pub nc3_residual: f64,
    pub h_features: f64,
    pub h_weights: f64,
    pub hdr_observed: f64,
    /// `None` when the smaller entropy vanishes
    pub mir_observed: Option<f64>,
    /// `None` for fewer than three classes
    pub mir_target: Option<f64>,
    pub hdr_target: f64,
}

/// Checks `features` (`d x N`, labeled) against classifier weights
/// `weights` (`d x C`, one column per class).
///
/// NC2/NC3 use means centered by the empirical global mean. The MIR/HDR
/// pair compares `G(Z1)` for the raw features with `G(Z2)`, where column
/// `i` of `Z2` is the weight of class `y_i`.
pub fn nc_check(features: &FeatureMatrix, weights: &FeatureMatrix) -> Result<NcReport> {
    let labels = features.require_labels()?;
    let classes = weights.len();
    if features.dim() != weights.dim() {
        return Err(Error::DimensionMismatch(features.dim(), weights.dim()));
    }
    let stats = ClassStatistics::new(features, classes)?;
    let z = features.data();

    let nc1 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| (z.column(i) - stats.class_means.column(y)).norm())
        .sum::<f64>()
        / labels.len() as f64;

    let cos = linalg::gram_of(&stats.centered_means)?;
    let c = classes as f64;
    let mut nc2: f64 = 0.0;
    for i in 0..classes {
        for j in 0..classes {
            let delta = if i == j { 1.0 } else { 0.0 };
            let target = c / (c - 1.0) * delta - 1.0 / (c - 1.0);
            nc2 = nc2.max((cos.data()[(i, j)] - target).abs());
        }
    }

    let w = weights.data();
    let m = &stats.centered_means;
    let (w_norm, m_norm) = (w.norm(), m.norm());
    if w_norm <= linalg::ZERO_NORM {
        return Err(Error::ZeroMatrix);
    }
    let nc3 = (w / w_norm - m / m_norm).norm();

    let per_sample = w.select_columns(labels);
    let triple = EntropyTriple::new(&linalg::gram_of(z)?, &linalg::gram_of(&per_sample)?)?;
    Ok(NcReport {
        classes,
        nc1_residual: nc1,
        nc2_residual: nc2,
        nc3_residual: nc3,
        h_features: triple.first,
        h_weights: triple.second,
        hdr_observed: triple.hdr(),
        mir_observed: triple.mir().ok(),
        mir_target: nc_targets(classes).ok().map(|t| t.mir),
        hdr_target: 0.0,
    })
}

/// Features that satisfy NC1 exactly: `per_class` copies of each ETF mean.
/// Returns the labeled features and the `d x C` mean matrix.
pub fn collapsed_features(
    classes: usize,
    dim: usize,
    per_class: usize,
    seed: u64,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let means = simplex_etf(classes, dim, seed)?;
    let labels: Vec<usize> = (0..classes * per_class).map(|i| i % classes).collect();
    let data = means.data().select_columns(&labels);
    Ok((
        FeatureMatrix::with_labels(data, labels, Some(classes))?,
        means,
    ))
}
