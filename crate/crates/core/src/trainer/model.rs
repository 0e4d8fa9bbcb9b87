use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ReLU after every hidden layer.
pub const RELU: &str = "relu";
/// ReLU after every hidden layer except the last, so features can take
/// either sign.
pub const RELU_LINEAR_FEATURES: &str = "relu-linear-features";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// `logits = W f + b`
    Linear,
    /// `logits_c = cos(W_c, f)`, no bias
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub activation: String,
    pub head: HeadKind,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, classes: usize, head: HeadKind) -> Self {
        Self {
            input_dim,
            hidden,
            classes,
            activation: RELU.into(),
            head,
        }
    }

    /// Whether hidden layer `l` (0-based) is followed by a ReLU.
    pub fn rectified(&self, l: usize) -> bool {
        self.activation == RELU || l + 1 < self.hidden.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input_dim)
    }

    /// `(name, rows, cols)` of every tensor, in storage order.
    pub fn layout(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut fan_in = self.input_dim;
        for (i, &width) in self.hidden.iter().enumerate() {
            out.push((format!("fc{}.weight", i + 1), width, fan_in));
            out.push((format!("fc{}.bias", i + 1), width, 1));
            fan_in = width;
        }
        out.push(("head.weight".into(), self.classes, fan_in));
        if self.head == HeadKind::Linear {
            out.push(("head.bias".into(), self.classes, 1));
        }
        out
    }
}

/// A named row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn from_matrix(name: impl Into<String>, m: &DMatrix<f64>) -> Self {
        Self {
            name: name.into(),
            shape: [m.nrows(), m.ncols()],
            data: m.transpose().as_slice().to_vec(),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.shape[0], self.shape[1], &self.data)
    }
}

/// Architecture plus parameter tensors; the serializable form of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    /// He-normal hidden weights, `N(0, 1/fan_in)` head weights, zero biases.
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = arch.layout();
        let last = layout.len() - if arch.head == HeadKind::Linear { 2 } else { 1 };
        let tensors = layout
            .into_iter()
            .enumerate()
            .map(|(i, (name, rows, cols))| {
                let m = if name.ends_with(".bias") {
                    DMatrix::zeros(rows, cols)
                } else {
                    let gain = if i == last { 1.0 } else { 2.0 };
                    let std = (gain / cols as f64).sqrt();
                    DMatrix::from_fn(rows, cols, |_, _| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        std * e
                    })
                };
                Tensor::from_matrix(name, &m)
            })
            .collect();
        Self {
            arch: arch.clone(),
            tensors,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let layout = self.arch.layout();
        if layout.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                layout.len(),
                self.tensors.len()
            )));
        }
        for ((name, rows, cols), t) in layout.iter().zip(&self.tensors) {
            if &t.name != name || t.shape != [*rows, *cols] || t.data.len() != rows * cols {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {name} [{rows}, {cols}]",
                    t.name, t.shape
                )));
            }
            if t.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has non-finite entries"
                )));
            }
        }
        if self.arch.activation != RELU && self.arch.activation != RELU_LINEAR_FEATURES {
            return Err(Error::Checkpoint(format!(
                "unsupported activation {}",
                self.arch.activation
            )));
        }
        Ok(())
    }

    /// `(1 - ω) a + ω b`, tensor by tensor. The endpoints return exact copies.
    pub fn lerp(a: &Self, b: &Self, omega: f64) -> Result<Self> {
        if a.arch != b.arch {
            return Err(Error::ArchitectureMismatch(format!(
                "{:?} vs {:?}",
                a.arch, b.arch
            )));
        }
        if omega == 0.0 {
            return Ok(a.clone());
        }
        if omega == 1.0 {
            return Ok(b.clone());
        }
        let tensors = a
            .tensors
            .iter()
            .zip(&b.tensors)
            .map(|(x, y)| Tensor {
                name: x.name.clone(),
                shape: x.shape,
                data: x
                    .data
                    .iter()
                    .zip(&y.data)
                    .map(|(p, q)| (1.0 - omega) * p + omega * q)
                    .collect(),
            })
            .collect();
        Ok(Self {
            arch: a.arch.clone(),
            tensors,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }
}

/// Working form of the network: one matrix per tensor in layout order.
#[derive(Debug, Clone)]
pub(crate) struct Mlp {
    pub arch: Architecture,
    pub params: Vec<DMatrix<f64>>,
}

pub(crate) struct Activations {
    inputs: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
    pub features: DMatrix<f64>,
    pub logits: DMatrix<f64>,
    pub probs: DMatrix<f64>,
}

/// Result of a forward pass: penultimate features, logits and
/// temperature-softmax probabilities, all column-per-sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub features: DMatrix<f64>,
    pub logits: DMatrix<f64>,
    pub probs: DMatrix<f64>,
}

fn add_bias(m: &mut DMatrix<f64>, b: &DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        col += b.column(0);
    }
}

fn check_finite(m: &DMatrix<f64>, layer: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation(layer.into()))
    }
}

/// Column-wise softmax of `logits / tau`.
pub fn softmax(logits: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let mut out = logits / tau;
    for mut col in out.column_iter_mut() {
        let max = col.max();
        col.apply(|x| *x = (*x - max).exp());
        let sum = col.sum();
        col /= sum;
    }
    out
}

fn normalize_rows(w: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let norms = DVector::from_iterator(w.nrows(), w.row_iter().map(|r| r.norm().max(1e-12)));
    let mut out = w.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row /= norms[i];
    }
    (out, norms)
}

fn normalize_cols(f: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let norms = DVector::from_iterator(f.ncols(), f.column_iter().map(|c| c.norm().max(1e-12)));
    let mut out = f.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col /= norms[j];
    }
    (out, norms)
}

impl Mlp {
    pub fn from_params(p: &ModelParams) -> Result<Self> {
        p.validate()?;
        Ok(Self {
            arch: p.arch.clone(),
            params: p.tensors.iter().map(Tensor::to_matrix).collect(),
        })
    }

    pub fn to_params(&self) -> ModelParams {
        ModelParams {
            arch: self.arch.clone(),
            tensors: self
                .arch
                .layout()
                .into_iter()
                .zip(&self.params)
                .map(|((name, _, _), m)| Tensor::from_matrix(name, m))
                .collect(),
        }
    }

    fn depth(&self) -> usize {
        self.arch.hidden.len()
    }

    /// Head weight, `C x d_f`.
    pub fn head_weight(&self) -> &DMatrix<f64> {
        &self.params[2 * self.depth()]
    }

    pub fn forward(&self, x: &DMatrix<f64>, tau: f64) -> Result<Activations> {
        if x.nrows() != self.arch.input_dim {
            return Err(Error::DimensionMismatch(self.arch.input_dim, x.nrows()));
        }
        let mut inputs = Vec::with_capacity(self.depth());
        let mut pre = Vec::with_capacity(self.depth());
        let mut a = x.clone();
        for l in 0..self.depth() {
            let mut z = &self.params[2 * l] * &a;
            add_bias(&mut z, &self.params[2 * l + 1]);
            check_finite(&z, &format!("fc{}", l + 1))?;
            let next = if self.arch.rectified(l) {
                z.map(|v| v.max(0.0))
            } else {
                z.clone()
            };
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        let features = a;
        let w = self.head_weight();
        let logits = match self.arch.head {
            HeadKind::Linear => {
                let mut l = w * &features;
                add_bias(&mut l, &self.params[2 * self.depth() + 1]);
                l
            }
            HeadKind::Cosine => {
                let (wn, _) = normalize_rows(w);
                let (fnorm, _) = normalize_cols(&features);
                wn * fnorm
            }
        };
        check_finite(&logits, "head")?;
        let probs = softmax(&logits, tau);
        Ok(Activations {
            inputs,
            pre,
            features,
            logits,
            probs,
        })
    }

    /// Gradients for every parameter given `∂L/∂logits` and an extra
    /// `∂L/∂features` term (may be empty).
    pub fn backward(
        &self,
        acts: &Activations,
        d_logits: &DMatrix<f64>,
        d_features_extra: Option<&DMatrix<f64>>,
    ) -> Vec<DMatrix<f64>> {
        let depth = self.depth();
        let mut grads: Vec<DMatrix<f64>> = self
            .params
            .iter()
            .map(|p| DMatrix::zeros(p.nrows(), p.ncols()))
            .collect();
        let w = self.head_weight();
        let mut d_f = match self.arch.head {
            HeadKind::Linear => {
                grads[2 * depth] = d_logits * acts.features.transpose();
                grads[2 * depth + 1] = DMatrix::from_column_slice(
                    d_logits.nrows(),
                    1,
                    d_logits.column_sum().as_slice(),
                );
                w.transpose() * d_logits
            }
            HeadKind::Cosine => {
                let (wn, w_norms) = normalize_rows(w);
                let (fnorm, f_norms) = normalize_cols(&acts.features);
                let mut d_wn = d_logits * fnorm.transpose();
                let mut d_fn = wn.transpose() * d_logits;
                for (i, mut row) in d_wn.row_iter_mut().enumerate() {
                    let u = wn.row(i);
                    let radial = u.dot(&row);
                    row -= u * radial;
                    row /= w_norms[i];
                }
                for (j, mut col) in d_fn.column_iter_mut().enumerate() {
                    let u = fnorm.column(j);
                    let radial = u.dot(&col);
                    col.axpy(-radial, &u, 1.0);
                    col /= f_norms[j];
                }
                grads[2 * depth] = d_wn;
                d_fn
            }
        };
        if let Some(extra) = d_features_extra {
            d_f += extra;
        }
        for l in (0..depth).rev() {
            let d_z = if self.arch.rectified(l) {
                d_f.zip_map(&acts.pre[l], |g, z| if z > 0.0 { g } else { 0.0 })
            } else {
                d_f.clone()
            };
            grads[2 * l] = &d_z * acts.inputs[l].transpose();
            grads[2 * l + 1] =
                DMatrix::from_column_slice(d_z.nrows(), 1, d_z.column_sum().as_slice());
            if l > 0 {
                d_f = self.params[2 * l].transpose() * d_z;
            }
        }
        grads
    }
}

/// Runs the network on `x` (`input_dim x B`).
pub fn forward(params: &ModelParams, x: &DMatrix<f64>, tau: f64) -> Result<Forward> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let acts = Mlp::from_params(params)?.forward(x, tau)?;
    Ok(Forward {
        features: acts.features,
        logits: acts.logits,
        probs: acts.probs,
    })
}
