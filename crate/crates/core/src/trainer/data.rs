//! Synthetic datasets: Gaussian blobs around simplex-ETF centers and
//! one-hot modular addition.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::collapse::simplex_etf;
use crate::error::{Error, Result};
use crate::linalg::FeatureMatrix;

// stream offsets so train/test/augmentation noise never share a sequence
const TEST_STREAM: u64 = 0x7465_7374;

/// `n_per_class` samples per class, labels interleaved (`y_i = i mod C`).
/// Centers are `separation` times a simplex ETF in `R^input_dim`.
pub fn make_blobs(
    classes: usize,
    input_dim: usize,
    per_class: usize,
    separation: f64,
    noise: f64,
    seed: u64,
) -> Result<FeatureMatrix> {
    if per_class < 2 {
        return Err(Error::InvalidConfig(format!(
            "blobs need at least 2 samples per class, got {per_class}"
        )));
    }
    let centers = simplex_etf(classes, input_dim, seed)?.into_data() * separation;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    blobs_around(&centers, per_class, noise, &mut rng)
}

fn blobs_around(
    centers: &DMatrix<f64>,
    per_class: usize,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureMatrix> {
    let classes = centers.ncols();
    let n = classes * per_class;
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut data = DMatrix::zeros(centers.nrows(), n);
    for (i, mut col) in data.column_iter_mut().enumerate() {
        for (r, x) in col.iter_mut().enumerate() {
            let eps: f64 = StandardNormal.sample(rng);
            *x = centers[(r, labels[i])] + noise * eps;
        }
    }
    FeatureMatrix::with_labels(data, labels, Some(classes))
}

/// All `p²` pairs `(a, b)` as concatenated one-hot vectors of length `2p`,
/// labeled `(a + b) mod p`, shuffled and split so the train part holds
/// `floor(train_fraction * p²)` pairs.
pub fn make_modadd(
    p: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    if p < 2 {
        return Err(Error::InvalidConfig(format!(
            "modulus must be at least 2, got {p}"
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut pairs: Vec<(usize, usize)> = (0..p).flat_map(|a| (0..p).map(move |b| (a, b))).collect();
    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * (p * p) as f64).floor() as usize;
    let encode = |pairs: &[(usize, usize)]| -> Result<FeatureMatrix> {
        let mut data = DMatrix::zeros(2 * p, pairs.len());
        let mut labels = Vec::with_capacity(pairs.len());
        for (i, &(a, b)) in pairs.iter().enumerate() {
            data[(a, i)] = 1.0;
            data[(p + b, i)] = 1.0;
            labels.push((a + b) % p);
        }
        FeatureMatrix::with_labels(data, labels, Some(p))
    };
    Ok((encode(&pairs[..n_train])?, encode(&pairs[n_train..])?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetConfig {
    Blobs {
        classes: usize,
        input_dim: usize,
        per_class: usize,
        test_per_class: usize,
        separation: f64,
        noise: f64,
    },
    ModAdd {
        p: usize,
        train_fraction: f64,
    },
}

impl DatasetConfig {
    pub fn classes(&self) -> usize {
        match *self {
            DatasetConfig::Blobs { classes, .. } => classes,
            DatasetConfig::ModAdd { p, .. } => p,
        }
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            DatasetConfig::Blobs { input_dim, .. } => input_dim,
            DatasetConfig::ModAdd { p, .. } => 2 * p,
        }
    }
}

/// Labeled train and test splits.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: FeatureMatrix,
    pub test: FeatureMatrix,
    pub classes: usize,
}

impl Dataset {
    /// Both blob splits share the centers drawn from `seed`.
    pub fn build(config: &DatasetConfig, seed: u64) -> Result<Self> {
        match *config {
            DatasetConfig::Blobs {
                classes,
                input_dim,
                per_class,
                test_per_class,
                separation,
                noise,
            } => {
                let train = make_blobs(classes, input_dim, per_class, separation, noise, seed)?;
                let centers = simplex_etf(classes, input_dim, seed)?.into_data() * separation;
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ TEST_STREAM);
                let test = blobs_around(&centers, test_per_class.max(2), noise, &mut rng)?;
                Ok(Self {
                    train,
                    test,
                    classes,
                })
            }
            DatasetConfig::ModAdd { p, train_fraction } => {
                let (train, test) = make_modadd(p, train_fraction, seed)?;
                Ok(Self {
                    train,
                    test,
                    classes: p,
                })
            }
        }
    }
}
