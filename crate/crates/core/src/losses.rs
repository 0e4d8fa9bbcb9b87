//! Information losses on batch features and classifier weights, with
//! analytic gradients.
//!
//! Every loss here is built from `H(K) = tr h(K)` with
//! `h(x) = -(x/N) log(x/N)`, so its gradient with respect to a symmetric `K`
//! is the spectral function `h'(K) = V diag(h'(λ)) Vᵀ`. Repeated eigenvalues
//! need no special treatment. `h'` diverges at zero and is evaluated at
//! `max(λ, EIGEN_CLIP)`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, FeatureMatrix, GramMatrix};
use crate::metrics::entropy_from_eigenvalues;

pub const EIGEN_CLIP: f64 = 1e-12;

/// Loss value with gradients for the `d x N` features and `d x C` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValueAndGrad {
    pub value: f64,
    pub grad_features: DMatrix<f64>,
    pub grad_weights: DMatrix<f64>,
}

impl LossValueAndGrad {
    fn zero(features: &DMatrix<f64>, weights: &DMatrix<f64>) -> Self {
        Self {
            value: 0.0,
            grad_features: DMatrix::zeros(features.nrows(), features.ncols()),
            grad_weights: DMatrix::zeros(weights.nrows(), weights.ncols()),
        }
    }
}

fn entropy_derivative(lambda: f64, n: f64) -> f64 {
    -(((lambda.max(EIGEN_CLIP)) / n).ln() + 1.0) / n
}

/// Matrix entropy of a symmetric matrix without Gram validation, normalized
/// by its dimension. Negative eigenvalues are clamped to zero.
pub fn spectral_entropy(k: &DMatrix<f64>) -> Result<f64> {
    let eig = linalg::symmetric_eigen(k)?;
    let values: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    Ok(entropy_from_eigenvalues(&values, k.nrows()))
}

/// `H(K)` and `∇_K H(K)` for a symmetric matrix.
pub fn spectral_entropy_and_grad(k: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let n = k.nrows() as f64;
    let eig = linalg::symmetric_eigen(k)?;
    let values: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let value = entropy_from_eigenvalues(&values, k.nrows());
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= entropy_derivative(values[j], n);
    }
    let grad = linalg::symmetrize(&(scaled * v.transpose()));
    Ok((value, grad))
}

/// `∇_K H(K)`, a symmetric matrix.
pub fn entropy_grad(k: &GramMatrix) -> Result<DMatrix<f64>> {
    Ok(spectral_entropy_and_grad(k.data())?.1)
}

/// Column-normalized features and their Gram matrix, kept for backprop.
struct NormalizedGram {
    unit: DMatrix<f64>,
    norms: Vec<f64>,
    gram: DMatrix<f64>,
}

impl NormalizedGram {
    fn new(z: &DMatrix<f64>) -> Result<Self> {
        let (unit, norms) = linalg::normalized_with_norms(z)?;
        let gram = unit.tr_mul(&unit);
        Ok(Self { unit, norms, gram })
    }

    /// Pulls a symmetric gradient on the Gram matrix back to the raw columns.
    fn backprop(&self, d_gram: &DMatrix<f64>) -> DMatrix<f64> {
        let mut d_unit = &self.unit * (d_gram + d_gram.transpose());
        for (j, mut col) in d_unit.column_iter_mut().enumerate() {
            let u = self.unit.column(j);
            let radial = u.dot(&col);
            col.axpy(-radial, &u, 1.0);
            col /= self.norms[j];
        }
        d_unit
    }
}

/// `H(G(Z))` and its gradient with respect to the raw columns of `Z`.
pub fn gram_entropy_and_grad(z: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let g = NormalizedGram::new(z)?;
    let (value, d_gram) = spectral_entropy_and_grad(&g.gram)?;
    Ok((value, g.backprop(&d_gram)))
}

fn check_shapes<'a>(features: &'a FeatureMatrix, weights: &FeatureMatrix) -> Result<&'a [usize]> {
    let labels = features.require_labels()?;
    if features.dim() != weights.dim() {
        return Err(Error::DimensionMismatch(features.dim(), weights.dim()));
    }
    let classes = weights.len();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::LabelOutOfRange {
            index,
            label,
            classes,
        });
    }
    Ok(labels)
}

/// Cross-modal alignment loss: for each class, the matrix entropy of the
/// Gram of its batch features plus its weight column, divided by the group
/// size. Groups of size one (class absent from the batch) are skipped.
pub fn cma_loss(features: &FeatureMatrix, weights: &FeatureMatrix) -> Result<LossValueAndGrad> {
    let labels = check_shapes(features, weights)?;
    let (f, w) = (features.data(), weights.data());
    let mut out = LossValueAndGrad::zero(f, w);
    for class in 0..w.ncols() {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let len = members.len() + 1;
        if len <= 1 {
            continue;
        }
        let mut group = f.select_columns(&members);
        group = group.insert_column(members.len(), 0.0);
        group.set_column(members.len(), &w.column(class));
        let (h, d_group) = gram_entropy_and_grad(&group)?;
        let scale = 1.0 / len as f64;
        out.value += h * scale;
        for (k, &i) in members.iter().enumerate() {
            let mut col = out.grad_features.column_mut(i);
            col.axpy(scale, &d_group.column(k), 1.0);
        }
        let mut col = out.grad_weights.column_mut(class);
        col.axpy(scale, &d_group.column(members.len()), 1.0);
    }
    Ok(out)
}

/// Entropies of `G(f)`, `G(V)` and `G(f) ⊙ G(V)` with their Gram-space
/// gradients, where `V_i = W_{y_i}`.
struct PairTerms {
    f: NormalizedGram,
    v: NormalizedGram,
    h_f: f64,
    h_v: f64,
    h_joint: f64,
    s_f: DMatrix<f64>,
    s_v: DMatrix<f64>,
    s_joint: DMatrix<f64>,
}

impl PairTerms {
    fn new(f: &DMatrix<f64>, v: &DMatrix<f64>, joint: bool) -> Result<Self> {
        let f = NormalizedGram::new(f)?;
        let v = NormalizedGram::new(v)?;
        let (h_f, s_f) = spectral_entropy_and_grad(&f.gram)?;
        let (h_v, s_v) = spectral_entropy_and_grad(&v.gram)?;
        let (h_joint, s_joint) = if joint {
            spectral_entropy_and_grad(&f.gram.component_mul(&v.gram))?
        } else {
            (0.0, DMatrix::zeros(0, 0))
        };
        Ok(Self {
            f,
            v,
            h_f,
            h_v,
            h_joint,
            s_f,
            s_v,
            s_joint,
        })
    }
}

/// Adds per-sample gradients on `V` into the class columns they came from.
fn scatter_to_weights(d_v: &DMatrix<f64>, labels: &[usize], grad_w: &mut DMatrix<f64>) {
    for (i, &y) in labels.iter().enumerate() {
        let mut col = grad_w.column_mut(y);
        col += d_v.column(i);
    }
}

/// `-λ MI(G(f), G(V))` with `V_i = W_{y_i}`.
pub fn mi_loss(
    features: &FeatureMatrix,
    weights: &FeatureMatrix,
    lambda: f64,
) -> Result<LossValueAndGrad> {
    let labels = check_shapes(features, weights)?;
    let (f, w) = (features.data(), weights.data());
    let mut out = LossValueAndGrad::zero(f, w);
    if lambda == 0.0 {
        return Ok(out);
    }
    let v = w.select_columns(labels);
    let t = PairTerms::new(f, &v, true)?;
    out.value = -lambda * (t.h_f + t.h_v - t.h_joint);
    let d_gf = (&t.s_f - t.s_joint.component_mul(&t.v.gram)) * -lambda;
    let d_gv = (&t.s_v - t.s_joint.component_mul(&t.f.gram)) * -lambda;
    out.grad_features = t.f.backprop(&d_gf);
    scatter_to_weights(&t.v.backprop(&d_gv), labels, &mut out.grad_weights);
    Ok(out)
}

/// Entropy gap below which the two entropies count as tied.
pub const HD_TIE: f64 = 1e-12;

/// `λ |H(G(f)) - H(G(V))|` with `V_i = W_{y_i}`; zero subgradient at a tie.
pub fn hd_loss(
    features: &FeatureMatrix,
    weights: &FeatureMatrix,
    lambda: f64,
) -> Result<LossValueAndGrad> {
    let labels = check_shapes(features, weights)?;
    let (f, w) = (features.data(), weights.data());
    let mut out = LossValueAndGrad::zero(f, w);
    if lambda == 0.0 {
        return Ok(out);
    }
    let v = w.select_columns(labels);
    let t = PairTerms::new(f, &v, false)?;
    let gap = t.h_f - t.h_v;
    out.value = lambda * gap.abs();
    if gap.abs() <= HD_TIE {
        return Ok(out);
    }
    let sign = lambda * gap.signum();
    out.grad_features = t.f.backprop(&(&t.s_f * sign));
    scatter_to_weights(
        &t.v.backprop(&(&t.s_v * -sign)),
        labels,
        &mut out.grad_weights,
    );
    Ok(out)
}

/// Central-difference gradient of `f` at `x`, entry by entry.
pub fn fd_gradient_oracle<F>(f: F, x: &DMatrix<f64>, step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DMatrix<f64>) -> f64,
{
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::InvalidStep(step));
    }
    let mut probe = x.clone();
    let mut grad = DMatrix::zeros(x.nrows(), x.ncols());
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            let orig = probe[(i, j)];
            probe[(i, j)] = orig + step;
            let up = f(&probe);
            probe[(i, j)] = orig - step;
            let down = f(&probe);
            probe[(i, j)] = orig;
            grad[(i, j)] = (up - down) / (2.0 * step);
        }
    }
    Ok(grad)
}

/// `‖a - b‖_F / max(‖b‖_F, 1e-12)`
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

/// Which loss a gradient check exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientTarget {
    MatrixEntropy,
    Cma,
    MutualInformation,
    EntropyDifference,
}

impl GradientTarget {
    pub const ALL: [GradientTarget; 4] = [
        GradientTarget::MatrixEntropy,
        GradientTarget::Cma,
        GradientTarget::MutualInformation,
        GradientTarget::EntropyDifference,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradientTarget::MatrixEntropy => "matrix_entropy",
            GradientTarget::Cma => "cma_loss",
            GradientTarget::MutualInformation => "mi_loss",
            GradientTarget::EntropyDifference => "hd_loss",
        }
    }
}

/// A random labeled batch (3 classes, 3 samples each, `d = 12`) and weights.
#[derive(Debug, Clone)]
pub struct GradientInstance {
    pub features: FeatureMatrix,
    pub weights: FeatureMatrix,
}

const GAP_MIN: f64 = 1e-3;

fn well_separated(values: &[f64]) -> bool {
    let mut v: Vec<f64> = values.iter().copied().filter(|&x| x > 1e-9).collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v.first().is_some_and(|&m| m >= GAP_MIN) && v.windows(2).all(|p| p[1] - p[0] >= GAP_MIN)
}

impl GradientInstance {
    /// Draws instances until every Gram spectrum involved has its nonzero
    /// eigenvalues at least `1e-3` apart and away from zero.
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
        loop {
            let f = DMatrix::from_fn(12, 9, |_, _| StandardNormal.sample(&mut rng));
            let w = DMatrix::from_fn(12, 3, |_, _| StandardNormal.sample(&mut rng));
            let v = w.select_columns(&labels);
            let Ok(pair) = PairTerms::new(&f, &v, false) else {
                continue;
            };
            let joint = pair.f.gram.component_mul(&pair.v.gram);
            let mut grams = vec![pair.f.gram.clone(), pair.v.gram.clone(), joint];
            for c in 0..3 {
                let mut group = f.select_columns(&[c, c + 3, c + 6]);
                group = group.insert_column(3, 0.0);
                group.set_column(3, &w.column(c));
                grams.push(
                    NormalizedGram::new(&group)
                        .map(|g| g.gram)
                        .unwrap_or_default(),
                );
            }
            let ok = grams.iter().all(|g| {
                g.nrows() > 0
                    && linalg::symmetric_eigen(g)
                        .map(|e| well_separated(e.eigenvalues.as_slice()))
                        .unwrap_or(false)
            });
            let gap = (spectral_entropy(&pair.f.gram).unwrap_or(0.0)
                - spectral_entropy(&pair.v.gram).unwrap_or(0.0))
            .abs();
            if ok && gap > 1e-3 {
                return Self {
                    features: FeatureMatrix::with_labels(f, labels, Some(3)).expect("finite"),
                    weights: FeatureMatrix::new(w).expect("finite"),
                };
            }
        }
    }

    /// Largest relative Frobenius error between the analytic gradient of
    /// `target` and central differences with step `1e-5`, over every input
    /// the loss differentiates.
    pub fn check(&self, target: GradientTarget) -> Result<f64> {
        const STEP: f64 = 1e-5;
        let labels = self.features.labels().expect("labeled").to_vec();
        let f0 = self.features.data().clone();
        let w0 = self.weights.data().clone();
        let loss = |f: &DMatrix<f64>, w: &DMatrix<f64>| -> Result<LossValueAndGrad> {
            let feats = FeatureMatrix::with_labels(f.clone(), labels.clone(), None)?;
            let weights = FeatureMatrix::new(w.clone())?;
            match target {
                GradientTarget::Cma => cma_loss(&feats, &weights),
                GradientTarget::MutualInformation => mi_loss(&feats, &weights, 0.7),
                GradientTarget::EntropyDifference => hd_loss(&feats, &weights, 0.7),
                GradientTarget::MatrixEntropy => unreachable!(),
            }
        };
        if target == GradientTarget::MatrixEntropy {
            let g = NormalizedGram::new(&f0)?;
            let analytic = spectral_entropy_and_grad(&g.gram)?.1;
            let numeric =
                fd_gradient_oracle(|k| spectral_entropy(k).unwrap_or(f64::NAN), &g.gram, STEP)?;
            // off-diagonal perturbations move one triangle only; compare the
            // symmetric parts
            return Ok(relative_error(&analytic, &linalg::symmetrize(&numeric)));
        }
        let analytic = loss(&f0, &w0)?;
        let num_f = fd_gradient_oracle(
            |f| loss(f, &w0).map(|l| l.value).unwrap_or(f64::NAN),
            &f0,
            STEP,
        )?;
        let num_w = fd_gradient_oracle(
            |w| loss(&f0, w).map(|l| l.value).unwrap_or(f64::NAN),
            &w0,
            STEP,
        )?;
        Ok(relative_error(&analytic.grad_features, &num_f)
            .max(relative_error(&analytic.grad_weights, &num_w)))
    }
}
