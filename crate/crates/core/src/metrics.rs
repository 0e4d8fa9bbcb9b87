//! Matrix information quantities over Gram matrices, plus two clustering
//! indices. All logarithms are natural, so entropies are in nats.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, FeatureMatrix, GramMatrix};

/// Entropies (and their max) at or below this are treated as zero.
pub const ENTROPY_EPS: f64 = 1e-12;
const SINGULAR_EPS: f64 = 1e-14;

/// `-Σ p log p` over the given weights, with `0 log 0 = 0`.
pub fn shannon_entropy(p: impl IntoIterator<Item = f64>) -> f64 {
    p.into_iter()
        .filter(|&x| x > 0.0)
        .map(|x| -x * x.ln())
        .sum()
}

/// Matrix entropy of eigenvalues `λ` from an `n x n` unit-diagonal matrix:
/// `-Σ (λ/n) log(λ/n)`.
///
/// Weights `λ/n <= ENTROPY_EPS` count as exact zeros and the rest are
/// normalized by their own sum (equal to `n` up to rounding), so a rank-one
/// matrix has entropy exactly 0.
pub fn entropy_from_eigenvalues(values: &[f64], n: usize) -> f64 {
    let n = n as f64;
    let kept: Vec<f64> = values
        .iter()
        .copied()
        .filter(|&l| l / n > ENTROPY_EPS)
        .collect();
    if kept.len() <= 1 {
        return 0.0;
    }
    shannon_entropy(kept.iter().map(|&l| l / n)).max(0.0)
}

/// Matrix entropy of a Gram matrix, in `[0, log N]`.
pub fn matrix_entropy(k: &GramMatrix) -> f64 {
    entropy_from_eigenvalues(k.spectrum().values(), k.dim())
}

/// `exp` of the Shannon entropy of the normalized singular values.
pub fn effective_rank(z: &FeatureMatrix) -> Result<f64> {
    effective_rank_of(z.data())
}

pub fn effective_rank_of(z: &DMatrix<f64>) -> Result<f64> {
    let s = linalg::singular_values_of(z)?;
    let values = s.values();
    if values.iter().all(|&v| v <= SINGULAR_EPS) {
        return Err(Error::ZeroMatrix);
    }
    let total: f64 = values.iter().sum();
    Ok(shannon_entropy(values.iter().map(|&v| v / total)).exp())
}

/// The three entropies behind MI, MIR and HDR, computed once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyTriple {
    pub first: f64,
    pub second: f64,
    pub joint: f64,
}

impl EntropyTriple {
    pub fn new(k1: &GramMatrix, k2: &GramMatrix) -> Result<Self> {
        let joint = linalg::hadamard(k1, k2)?;
        Ok(Self {
            first: matrix_entropy(k1),
            second: matrix_entropy(k2),
            joint: matrix_entropy(&joint),
        })
    }

    pub fn mi(&self) -> f64 {
        let mi = self.first + self.second - self.joint;
        if mi < -1e-9 {
            log::warn!("matrix mutual information is negative: {mi:e}");
        }
        mi
    }

    pub fn mir(&self) -> Result<f64> {
        let denom = self.first.min(self.second);
        if denom <= ENTROPY_EPS {
            return Err(Error::DegenerateEntropy(denom));
        }
        let mir = self.mi() / denom;
        if mir > 1.0 + 1e-9 {
            log::warn!("MIR exceeds one: {mir}");
        }
        Ok(mir)
    }

    pub fn hdr(&self) -> f64 {
        let max = self.first.max(self.second);
        if max <= ENTROPY_EPS {
            return 0.0;
        }
        ((self.first - self.second).abs() / max).clamp(0.0, 1.0)
    }
}

/// `H(K1) + H(K2) - H(K1 ⊙ K2)`
pub fn matrix_mi(k1: &GramMatrix, k2: &GramMatrix) -> Result<f64> {
    Ok(EntropyTriple::new(k1, k2)?.mi())
}

/// Mutual information divided by the smaller entropy.
pub fn mir(k1: &GramMatrix, k2: &GramMatrix) -> Result<f64> {
    EntropyTriple::new(k1, k2)?.mir()
}

/// `|H(K1) - H(K2)| / max(H(K1), H(K2))`, zero when both entropies vanish.
pub fn hdr(k1: &GramMatrix, k2: &GramMatrix) -> Result<f64> {
    if k1.dim() != k2.dim() {
        return Err(Error::DimensionMismatch(k1.dim(), k2.dim()));
    }
    Ok(EntropyTriple {
        first: matrix_entropy(k1),
        second: matrix_entropy(k2),
        joint: 0.0,
    }
    .hdr())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One evaluation of a model at a training step. Serialized as one JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub split: Split,
    pub h_feat: f64,
    pub h_weights: f64,
    pub mi: f64,
    pub mir: f64,
    pub hdr: f64,
    pub accuracy: f64,
    pub loss: f64,
}

/// Columns of `z` grouped by label, classes in ascending order. Features are
/// L2-normalized first.
struct Clusters {
    points: DMatrix<f64>,
    members: Vec<(usize, Vec<usize>)>,
}

impl Clusters {
    fn new(z: &FeatureMatrix) -> Result<Self> {
        let labels = z.require_labels()?;
        let points = linalg::normalize_columns(z)?.into_data();
        let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut groups = vec![Vec::new(); classes];
        for (i, &l) in labels.iter().enumerate() {
            groups[l].push(i);
        }
        let members: Vec<_> = groups
            .into_iter()
            .enumerate()
            .filter(|(_, g)| !g.is_empty())
            .collect();
        if members.len() < 2 {
            return Err(Error::TooFewClasses(members.len()));
        }
        Ok(Self { points, members })
    }

    fn dist(&self, i: usize, j: usize) -> f64 {
        (self.points.column(i) - self.points.column(j)).norm()
    }
}

/// Mean silhouette coefficient on L2-normalized features.
pub fn silhouette(z: &FeatureMatrix) -> Result<f64> {
    let clusters = Clusters::new(z)?;
    if let Some((class, _)) = clusters.members.iter().find(|(_, m)| m.len() < 2) {
        return Err(Error::InsufficientClassSize(*class));
    }
    let n = clusters.points.ncols();
    let mut total = 0.0;
    for (own, members) in &clusters.members {
        for &i in members {
            let mut a = 0.0;
            let mut b = f64::INFINITY;
            for (other, others) in &clusters.members {
                let sum: f64 = others.iter().map(|&j| clusters.dist(i, j)).sum();
                if other == own {
                    a = sum / (others.len() - 1) as f64;
                } else {
                    b = b.min(sum / others.len() as f64);
                }
            }
            let scale = a.max(b);
            if scale > 0.0 {
                total += (b - a) / scale;
            }
        }
    }
    Ok(total / n as f64)
}

/// Davies-Bouldin index on L2-normalized features.
pub fn davies_bouldin(z: &FeatureMatrix) -> Result<f64> {
    let clusters = Clusters::new(z)?;
    let centroids: Vec<DVector<f64>> = clusters
        .members
        .iter()
        .map(|(_, m)| {
            let mut c = DVector::zeros(clusters.points.nrows());
            for &i in m {
                c += clusters.points.column(i);
            }
            c / m.len() as f64
        })
        .collect();
    let scatter: Vec<f64> = clusters
        .members
        .iter()
        .zip(&centroids)
        .map(|((_, m), c)| {
            m.iter()
                .map(|&i| (clusters.points.column(i) - c).norm())
                .sum::<f64>()
                / m.len() as f64
        })
        .collect();
    let k = centroids.len();
    let mut total = 0.0;
    for i in 0..k {
        let mut worst: f64 = 0.0;
        for j in 0..k {
            if i == j {
                continue;
            }
            let sep = (&centroids[i] - &centroids[j]).norm();
            if sep <= 1e-12 {
                return Err(Error::CoincidentCentroids(
                    clusters.members[i.min(j)].0,
                    clusters.members[i.max(j)].0,
                ));
            }
            worst = worst.max((scatter[i] + scatter[j]) / sep);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gram;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    fn structure(alpha: f64, c: usize) -> GramMatrix {
        let m = DMatrix::from_fn(c, c, |i, j| if i == j { 1.0 } else { alpha });
        GramMatrix::new(m).unwrap()
    }

    /// Two blobs in `R^16` around `e0 + e1` and `e1 - e0`, isotropic noise
    /// scaled by `spread`, `n` points each.
    fn blobs(spread: f64, n: usize, seed: u64) -> FeatureMatrix {
        let noise = random(16, 2 * n, seed);
        let data = DMatrix::from_fn(16, 2 * n, |r, c| {
            let center = match r {
                0 if c < n => 1.0,
                0 => -1.0,
                1 => 1.0,
                _ => 0.0,
            };
            center + spread * noise[(r, c)]
        });
        FeatureMatrix::with_labels(data, (0..2 * n).map(|i| i / n).collect(), None).unwrap()
    }

    #[test]
    fn identical_columns_have_zero_entropy() {
        for (n, seed) in [(2, 1), (9, 2), (64, 3)] {
            let v = random(5, 1, seed);
            let z = FeatureMatrix::new(
                v.columns_range(0..1).into_owned() * DMatrix::from_element(1, n, 1.7),
            )
            .unwrap();
            assert_eq!(matrix_entropy(&gram(&z).unwrap()), 0.0);
        }
    }

    #[test]
    fn entropy_of_identity_and_ones() {
        for n in [1, 2, 7, 10] {
            assert_relative_eq!(
                matrix_entropy(&GramMatrix::identity(n)),
                (n as f64).ln(),
                epsilon = 1e-14
            );
            assert!(matrix_entropy(&GramMatrix::ones(n)).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_of_simplex_structure() {
        assert_relative_eq!(
            matrix_entropy(&structure(-1.0 / 9.0, 10)),
            9f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn effective_rank_cases() {
        let id = FeatureMatrix::new(DMatrix::identity(5, 5)).unwrap();
        assert_relative_eq!(effective_rank(&id).unwrap(), 5.0, epsilon = 1e-12);
        let u = random(6, 1, 1);
        let v = random(1, 9, 2);
        let rank1 = FeatureMatrix::new(&u * &v).unwrap();
        assert_relative_eq!(effective_rank(&rank1).unwrap(), 1.0, epsilon = 1e-9);
        let zero = FeatureMatrix::new(DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(effective_rank(&zero).unwrap_err(), Error::ZeroMatrix);
    }

    #[test]
    fn mutual_information_cases() {
        let id = GramMatrix::identity(6);
        assert_relative_eq!(matrix_mi(&id, &id).unwrap(), 6f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(mir(&id, &id).unwrap(), 1.0, epsilon = 1e-12);

        let etf = structure(-1.0 / 9.0, 10);
        let expected = 9f64.ln() / 9.0 + 8.0 * 8f64.ln() / 9.0;
        assert_relative_eq!(matrix_mi(&etf, &etf).unwrap(), expected, epsilon = 1e-10);
        assert_relative_eq!(matrix_mi(&etf, &etf).unwrap(), 2.09253, epsilon = 1e-5);
        assert_relative_eq!(
            mir(&etf, &etf).unwrap(),
            expected / 9f64.ln(),
            epsilon = 1e-12
        );
        assert_relative_eq!(mir(&etf, &etf).unwrap(), 0.952352, epsilon = 2e-6);
        assert_relative_eq!(
            mir(&structure(-0.5, 3), &structure(-0.5, 3)).unwrap(),
            0.5,
            epsilon = 1e-12
        );

        let k = gram(&FeatureMatrix::new(random(4, 10, 3)).unwrap()).unwrap();
        assert!(matrix_mi(&k, &GramMatrix::ones(10)).unwrap().abs() < 1e-12);
    }

    #[test]
    fn mir_rejects_degenerate_entropy() {
        let ones = GramMatrix::ones(4);
        assert!(matches!(
            mir(&ones, &GramMatrix::identity(4)),
            Err(Error::DegenerateEntropy(_))
        ));
        assert!(matches!(
            matrix_mi(&ones, &GramMatrix::identity(5)),
            Err(Error::DimensionMismatch(4, 5))
        ));
    }

    #[test]
    fn hdr_cases() {
        let k = gram(&FeatureMatrix::new(random(3, 8, 4)).unwrap()).unwrap();
        assert_eq!(hdr(&k, &k).unwrap(), 0.0);
        assert_relative_eq!(
            hdr(&GramMatrix::identity(4), &GramMatrix::ones(4)).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_eq!(
            hdr(&GramMatrix::ones(4), &GramMatrix::ones(4)).unwrap(),
            0.0
        );
        let etf = structure(-1.0 / 9.0, 10);
        assert!(hdr(&etf, &etf.clone()).unwrap() < 1e-12);
    }

    #[test]
    fn silhouette_separated_and_degenerate() {
        let tight = blobs(0.01, 10, 5);
        assert!(silhouette(&tight).unwrap() > 0.9);

        let same = FeatureMatrix::with_labels(
            DMatrix::from_element(3, 6, 1.0),
            vec![0, 0, 0, 1, 1, 1],
            None,
        )
        .unwrap();
        assert_eq!(silhouette(&same).unwrap(), 0.0);

        // one cloud, labels alternating: a(i) ≈ b(i)
        let cloud = random(3, 200, 6).add_scalar(5.0);
        let dup =
            FeatureMatrix::with_labels(cloud, (0..200).map(|i| i % 2).collect(), None).unwrap();
        assert!(silhouette(&dup).unwrap().abs() < 0.05);
    }

    #[test]
    fn silhouette_errors() {
        let z = FeatureMatrix::with_labels(random(2, 3, 7), vec![0, 0, 1], None).unwrap();
        assert_eq!(silhouette(&z).unwrap_err(), Error::InsufficientClassSize(1));
        let one = FeatureMatrix::with_labels(random(2, 3, 7), vec![0, 0, 0], None).unwrap();
        assert_eq!(silhouette(&one).unwrap_err(), Error::TooFewClasses(1));
        let unlabeled = FeatureMatrix::new(random(2, 3, 7)).unwrap();
        assert_eq!(silhouette(&unlabeled).unwrap_err(), Error::MissingLabels);
    }

    #[test]
    fn davies_bouldin_cases() {
        assert!(davies_bouldin(&blobs(0.01, 10, 8)).unwrap() < 0.1);

        let data = DMatrix::from_fn(2, 4, |r, c| if (c < 2) == (r == 0) { 1.0 } else { 0.0 });
        let zero_scatter = FeatureMatrix::with_labels(data, vec![0, 0, 1, 1], None).unwrap();
        assert_eq!(davies_bouldin(&zero_scatter).unwrap(), 0.0);

        let loose = davies_bouldin(&blobs(0.2, 20, 9)).unwrap();
        let tight = davies_bouldin(&blobs(0.1, 20, 9)).unwrap();
        assert!(tight < loose);

        let same =
            FeatureMatrix::with_labels(DMatrix::from_element(2, 4, 1.0), vec![0, 0, 1, 1], None)
                .unwrap();
        assert_eq!(
            davies_bouldin(&same).unwrap_err(),
            Error::CoincidentCentroids(0, 1)
        );
    }

    #[test]
    fn shrinking_spread_lowers_entropy_and_raises_silhouette() {
        let mut last_h = f64::INFINITY;
        let mut last_s = f64::NEG_INFINITY;
        for spread in [0.4, 0.2, 0.1, 0.05] {
            let z = blobs(spread, 15, 10);
            let h = matrix_entropy(&gram(&z).unwrap());
            let s = silhouette(&z).unwrap();
            assert!(h < last_h && s > last_s, "spread {spread}: h={h}, s={s}");
            last_h = h;
            last_s = s;
        }
    }
}
