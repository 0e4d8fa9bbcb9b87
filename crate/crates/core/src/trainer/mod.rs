//! Deterministic desk-scale training of a ReLU MLP with a linear or cosine
//! head, tracking matrix-information metrics along the way.
//!
//! Metrics at each evaluation compare the Gram matrix of penultimate
//! features `f` on a fixed batch with the Gram matrix of `V`, whose column
//! `i` is the classifier weight of the sample's class. The classifier bias is
//! never part of `V`.

mod checkpoint;
mod data;
mod model;
mod optim;

pub use checkpoint::{Checkpoint, ENCODING, FORMAT, VERSION};
pub use data::{make_blobs, make_modadd, Dataset, DatasetConfig};
pub use model::{
    forward, softmax, Architecture, Forward, HeadKind, ModelParams, Tensor, RELU,
    RELU_LINEAR_FEATURES,
};
pub use optim::{cosine_lr, OptimizerConfig};

use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{self, FeatureMatrix};
use crate::losses::{self, LossValueAndGrad};
use crate::metrics::{EntropyTriple, MetricRecord, Split};
use model::{Activations, Mlp};
use optim::Optimizer;

/// Metrics are computed on at most this many samples per split.
pub const EVAL_BATCH: usize = 256;

const ORDER_STREAM: u64 = 0x006f_7264_6572;
const EVAL_STREAM: u64 = 0x6576_616c;
const AUG_STREAM: u64 = 0x0061_7567;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LossConfig {
    #[serde(rename = "ce")]
    Ce,
    /// `L_ce - λ MI(G(f), G(V))`
    #[serde(rename = "ce+mi")]
    CeMi { lambda: f64 },
    /// `L_ce + λ |H(G(f)) - H(G(V))|`
    #[serde(rename = "ce+hd")]
    CeHd { lambda: f64 },
    /// `(1 - λ) L_ce + λ L_cma`
    #[serde(rename = "ce+cma")]
    CeCma { lambda: f64 },
}

impl LossConfig {
    pub fn name(&self) -> &'static str {
        match self {
            LossConfig::Ce => "ce",
            LossConfig::CeMi { .. } => "ce+mi",
            LossConfig::CeHd { .. } => "ce+hd",
            LossConfig::CeCma { .. } => "ce+cma",
        }
    }
}

/// Pseudo-labeled training on the part of the train split beyond the first
/// `labeled_per_class * C` samples. Augmentations are additive Gaussian
/// noise: weak views pick pseudo-labels, strong views feed the MI/HD term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemiSupervised {
    pub labeled_per_class: usize,
    /// unlabeled samples per labeled sample in a batch
    pub unlabeled_ratio: usize,
    pub threshold: f64,
    pub weak_noise: f64,
    pub strong_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dataset: DatasetConfig,
    pub loss: LossConfig,
    pub temperature: f64,
    pub optimizer: OptimizerConfig,
    /// initial learning rate, annealed with a cosine schedule
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// seeds the dataset and the initialization
    pub seed: u64,
    /// seeds the batch order; defaults to `seed`
    pub data_seed: Option<u64>,
    pub hidden: Vec<usize>,
    /// [`RELU`] or [`RELU_LINEAR_FEATURES`]
    pub activation: String,
    pub head: HeadKind,
    pub eval_interval: usize,
    /// whether MI/HD/CMA gradients also update the classifier weights
    pub info_grad_to_weights: bool,
    pub semi_supervised: Option<SemiSupervised>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::Blobs {
                classes: 3,
                input_dim: 32,
                per_class: 200,
                test_per_class: 100,
                separation: 4.0,
                noise: 1.0,
            },
            loss: LossConfig::Ce,
            temperature: 1.0,
            optimizer: OptimizerConfig::sgd(),
            lr: 0.03,
            batch_size: 64,
            steps: 2000,
            seed: 0,
            data_seed: None,
            hidden: vec![128, 128],
            activation: RELU.into(),
            head: HeadKind::Linear,
            eval_interval: 100,
            info_grad_to_weights: true,
            semi_supervised: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        match self.loss {
            LossConfig::Ce => {}
            LossConfig::CeMi { lambda } | LossConfig::CeHd { lambda } => {
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return bad(format!("lambda must be nonnegative, got {lambda}"));
                }
            }
            LossConfig::CeCma { lambda } => {
                if !(0.0..=1.0).contains(&lambda) {
                    return bad(format!("CMA lambda must lie in [0, 1], got {lambda}"));
                }
            }
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!(
                "learning rate must be nonnegative, got {}",
                self.lr
            ));
        }
        if self.batch_size == 0 || self.eval_interval == 0 {
            return bad("batch size and eval interval must be positive".into());
        }
        if self.activation != RELU && self.activation != RELU_LINEAR_FEATURES {
            return bad(format!("unsupported activation {}", self.activation));
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if let Some(s) = &self.semi_supervised {
            if !(0.0..=1.0).contains(&s.threshold) {
                return bad(format!("threshold must lie in [0, 1], got {}", s.threshold));
            }
            if s.labeled_per_class == 0 || s.unlabeled_ratio == 0 {
                return bad("semi-supervised pools must be nonempty".into());
            }
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        let mut arch = Architecture::new(
            self.dataset.input_dim(),
            self.hidden.clone(),
            self.dataset.classes(),
            self.head,
        );
        arch.activation = self.activation.clone();
        arch
    }

    fn order_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }
}

/// Receives one record per split at every evaluation.
pub trait LogSink {
    fn record(&mut self, record: &MetricRecord) -> Result<()>;
}

impl LogSink for Vec<MetricRecord> {
    fn record(&mut self, record: &MetricRecord) -> Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

/// Writes records as JSON lines.
pub struct JsonlSink<W: Write>(pub W);

impl<W: Write> LogSink for JsonlSink<W> {
    fn record(&mut self, record: &MetricRecord) -> Result<()> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.0, "{line}")
            .map_err(|e| Error::InvalidConfig(format!("log write failed: {e}")))
    }
}

/// Discards records.
pub struct NullSink;

impl LogSink for NullSink {
    fn record(&mut self, _: &MetricRecord) -> Result<()> {
        Ok(())
    }
}

/// A fixed, sorted subset of at most [`EVAL_BATCH`] sample indices.
pub fn eval_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ EVAL_STREAM));
    idx.truncate(EVAL_BATCH);
    idx.sort_unstable();
    idx
}

/// Epoch-wise shuffled batches; the last partial batch of an epoch is
/// dropped unless the pool is smaller than one batch.
struct BatchSampler {
    pool: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
}

impl BatchSampler {
    fn new(pool: Vec<usize>, batch: usize) -> Self {
        let batch = batch.min(pool.len());
        Self {
            pool,
            order: Vec::new(),
            cursor: usize::MAX,
            batch,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        if self.cursor.saturating_add(self.batch) > self.order.len() {
            self.order = self.pool.clone();
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let out = self.order[self.cursor..self.cursor + self.batch].to_vec();
        self.cursor += self.batch;
        out
    }
}

fn cross_entropy(probs: &DMatrix<f64>, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs[(y, i)].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / labels.len() as f64
}

fn accuracy(probs: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| probs.column(i).argmax().0 == y)
        .count();
    hits as f64 / labels.len() as f64
}

/// Columns whose norm is large enough to take part in a Gram matrix.
fn live_columns(f: &DMatrix<f64>, idx: &[usize]) -> Vec<usize> {
    idx.iter()
        .copied()
        .filter(|&i| f.column(i).norm() > linalg::ZERO_NORM)
        .collect()
}

/// Information metrics between `G(f)` and `G(V)` on the given columns.
fn information(
    features: &DMatrix<f64>,
    head_weight: &DMatrix<f64>,
    labels: &[usize],
    idx: &[usize],
) -> Result<EntropyTriple> {
    let live = live_columns(features, idx);
    if live.len() < idx.len() {
        log::warn!(
            "{} evaluation samples have zero features",
            idx.len() - live.len()
        );
    }
    if live.is_empty() {
        return Err(Error::ZeroNormColumn(idx.first().copied().unwrap_or(0)));
    }
    let f = features.select_columns(&live);
    let ys: Vec<usize> = live.iter().map(|&i| labels[i]).collect();
    let v = head_weight.transpose().select_columns(&ys);
    EntropyTriple::new(&linalg::gram_of(&f)?, &linalg::gram_of(&v)?)
}

/// Accuracy and mean cross-entropy over a whole split, with information
/// metrics on the columns listed in `eval_idx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    pub h_feat: f64,
    pub h_weights: f64,
    pub mi: f64,
    /// zero when the smaller entropy vanishes
    pub mir: f64,
    pub hdr: f64,
}

impl Evaluation {
    pub fn record(&self, step: usize, split: Split) -> MetricRecord {
        MetricRecord {
            step,
            split,
            h_feat: self.h_feat,
            h_weights: self.h_weights,
            mi: self.mi,
            mir: self.mir,
            hdr: self.hdr,
            accuracy: self.accuracy,
            loss: self.loss,
        }
    }
}

fn evaluate_mlp(
    mlp: &Mlp,
    data: &FeatureMatrix,
    eval_idx: &[usize],
    tau: f64,
) -> Result<Evaluation> {
    let labels = data.require_labels()?;
    let acts = mlp.forward(data.data(), tau)?;
    let t = information(&acts.features, mlp.head_weight(), labels, eval_idx)?;
    Ok(Evaluation {
        accuracy: accuracy(&acts.probs, labels),
        loss: cross_entropy(&acts.probs, labels),
        h_feat: t.first,
        h_weights: t.second,
        mi: t.mi(),
        mir: t.mir().unwrap_or(0.0),
        hdr: t.hdr(),
    })
}

pub fn evaluate(
    params: &ModelParams,
    data: &FeatureMatrix,
    eval_idx: &[usize],
    tau: f64,
) -> Result<Evaluation> {
    evaluate_mlp(&Mlp::from_params(params)?, data, eval_idx, tau)
}

/// Penultimate features of the samples the model is confident about.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    /// positions within the input batch
    pub indices: Vec<usize>,
    /// features of the kept samples, labeled with their argmax class
    pub features: FeatureMatrix,
}

/// Keeps the columns of `x` whose largest class probability strictly
/// exceeds `threshold`, labeled by argmax.
pub fn pseudo_label_filter(
    params: &ModelParams,
    x: &DMatrix<f64>,
    threshold: f64,
    tau: f64,
) -> Result<PseudoLabels> {
    let out = forward(params, x, tau)?;
    select_confident(&out.features, &out.probs, threshold)
}

fn select_confident(
    features: &DMatrix<f64>,
    probs: &DMatrix<f64>,
    threshold: f64,
) -> Result<PseudoLabels> {
    let mut indices = Vec::new();
    let mut labels = Vec::new();
    for (i, col) in probs.column_iter().enumerate() {
        let (arg, max) = col.argmax();
        if max > threshold {
            indices.push(i);
            labels.push(arg);
        }
    }
    if indices.is_empty() {
        return Err(Error::EmptySelection);
    }
    let features = FeatureMatrix::with_labels(features.select_columns(&indices), labels, None)?;
    Ok(PseudoLabels { indices, features })
}

fn rng_digest(seed: u64, rng: &ChaCha8Rng) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(rng.get_seed());
    h.update(rng.get_stream().to_le_bytes());
    h.update(rng.get_word_pos().to_le_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn info_term(
    loss: LossConfig,
    features: &DMatrix<f64>,
    labels: &[usize],
    head_weight: &DMatrix<f64>,
) -> Result<Option<(Vec<usize>, LossValueAndGrad)>> {
    let all: Vec<usize> = (0..features.ncols()).collect();
    let live = live_columns(features, &all);
    if live.len() < 2 {
        return Ok(None);
    }
    let f = FeatureMatrix::with_labels(
        features.select_columns(&live),
        live.iter().map(|&i| labels[i]).collect(),
        None,
    )?;
    let w = FeatureMatrix::new(head_weight.transpose())?;
    let out = match loss {
        LossConfig::Ce => return Ok(None),
        LossConfig::CeMi { lambda } => losses::mi_loss(&f, &w, lambda)?,
        LossConfig::CeHd { lambda } => losses::hd_loss(&f, &w, lambda)?,
        LossConfig::CeCma { lambda } => {
            let mut out = losses::cma_loss(&f, &w)?;
            out.value *= lambda;
            out.grad_features *= lambda;
            out.grad_weights *= lambda;
            out
        }
    };
    Ok(Some((live, out)))
}

/// The mutable state of one training run.
struct Session<'a> {
    config: &'a TrainConfig,
    data: Dataset,
    mlp: Mlp,
    optimizer: Optimizer,
    order_rng: ChaCha8Rng,
    aug_rng: ChaCha8Rng,
    labeled: BatchSampler,
    unlabeled: Option<BatchSampler>,
    eval_train: Vec<usize>,
    eval_test: Vec<usize>,
}

impl<'a> Session<'a> {
    fn new(config: &'a TrainConfig, init: ModelParams) -> Result<Self> {
        let data = Dataset::build(&config.dataset, config.seed)?;
        let mlp = Mlp::from_params(&init)?;
        let n = data.train.len();
        let (labeled, unlabeled) = match &config.semi_supervised {
            None => ((0..n).collect::<Vec<_>>(), None),
            Some(s) => {
                let cut = (s.labeled_per_class * data.classes).min(n);
                if cut == n {
                    return Err(Error::InvalidConfig("no unlabeled samples remain".into()));
                }
                ((0..cut).collect(), Some((cut..n).collect::<Vec<_>>()))
            }
        };
        let unlabeled = unlabeled.map(|pool| {
            let ratio = config.semi_supervised.map_or(1, |s| s.unlabeled_ratio);
            BatchSampler::new(pool, config.batch_size * ratio)
        });
        let optimizer = Optimizer::new(config.optimizer, &mlp.params);
        Ok(Self {
            eval_train: eval_indices(data.train.len(), config.seed),
            eval_test: eval_indices(data.test.len(), config.seed),
            config,
            data,
            mlp,
            optimizer,
            order_rng: ChaCha8Rng::seed_from_u64(config.order_seed() ^ ORDER_STREAM),
            aug_rng: ChaCha8Rng::seed_from_u64(config.order_seed() ^ AUG_STREAM),
            labeled: BatchSampler::new(labeled, config.batch_size),
            unlabeled,
        })
    }

    fn log(&self, step: usize, sink: &mut dyn LogSink) -> Result<()> {
        let tau = self.config.temperature;
        let train = evaluate_mlp(&self.mlp, &self.data.train, &self.eval_train, tau)?;
        sink.record(&train.record(step, Split::Train))?;
        let test = evaluate_mlp(&self.mlp, &self.data.test, &self.eval_test, tau)?;
        sink.record(&test.record(step, Split::Test))
    }

    fn noisy(&mut self, x: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
        let rng = &mut self.aug_rng;
        x.map(|v| {
            let e: f64 = StandardNormal.sample(rng);
            v + sigma * e
        })
    }

    /// One optimizer update; returns the composite objective value.
    fn step(&mut self, step: usize) -> Result<f64> {
        let config = self.config;
        let tau = config.temperature;
        let train_labels = self.data.train.require_labels()?.to_vec();
        let batch = self.labeled.next(&mut self.order_rng);
        let labels: Vec<usize> = batch.iter().map(|&i| train_labels[i]).collect();
        let mut x = self.data.train.data().select_columns(&batch);

        // unlabeled part: strong views of confidently pseudo-labeled samples
        let mut pseudo: Vec<usize> = Vec::new();
        if let (Some(sampler), Some(semi)) = (self.unlabeled.as_mut(), config.semi_supervised) {
            let ub = sampler.next(&mut self.order_rng);
            let xu = self.data.train.data().select_columns(&ub);
            let weak = self.noisy(&xu, semi.weak_noise);
            let strong = self.noisy(&xu, semi.strong_noise);
            let acts = self.mlp.forward(&weak, tau)?;
            if let Ok(sel) = select_confident(&acts.features, &acts.probs, semi.threshold) {
                let b = x.ncols();
                x = x.resize_horizontally(b + sel.indices.len(), 0.0);
                for (k, &i) in sel.indices.iter().enumerate() {
                    x.set_column(b + k, &strong.column(i));
                }
                pseudo = sel.features.labels().expect("labeled").to_vec();
            }
        }

        let b = labels.len();
        let acts: Activations = self.mlp.forward(&x, tau)?;
        let ce_scale = match config.loss {
            LossConfig::CeCma { lambda } => 1.0 - lambda,
            _ => 1.0,
        };
        let probs = acts.probs.columns(0, b).into_owned();
        let mut value = ce_scale * cross_entropy(&probs, &labels);
        let mut d_logits = DMatrix::zeros(acts.probs.nrows(), acts.probs.ncols());
        for (i, &y) in labels.iter().enumerate() {
            let mut col = d_logits.column_mut(i);
            col.copy_from(&acts.probs.column(i));
            col[y] -= 1.0;
            col *= ce_scale / (b as f64 * tau);
        }

        // the info term sees labeled features, or only pseudo-labeled ones
        // for MI/HD in semi-supervised runs
        let (offset, info_labels) = match (config.semi_supervised, config.loss) {
            (Some(_), LossConfig::CeMi { .. } | LossConfig::CeHd { .. }) => (b, pseudo),
            _ => (0, labels.clone()),
        };
        let f = acts
            .features
            .columns(offset, info_labels.len())
            .into_owned();
        let mut d_features = DMatrix::zeros(acts.features.nrows(), acts.features.ncols());
        let mut d_head = None;
        if let Some((live, term)) =
            info_term(config.loss, &f, &info_labels, self.mlp.head_weight())?
        {
            value += term.value;
            for (k, &i) in live.iter().enumerate() {
                d_features.set_column(offset + i, &term.grad_features.column(k));
            }
            if config.info_grad_to_weights {
                d_head = Some(term.grad_weights.transpose());
            }
        }

        if !value.is_finite() {
            return Err(Error::DivergedLoss(step));
        }
        let mut grads = self.mlp.backward(&acts, &d_logits, Some(&d_features));
        if let Some(d) = d_head {
            grads[2 * config.hidden.len()] += d;
        }
        let lr = cosine_lr(config.lr, step, config.steps);
        self.optimizer.step(&mut self.mlp.params, &grads, lr);
        Ok(value)
    }
}

/// Trains from the seeded initialization for `config.steps` updates,
/// logging train and test metrics at step 0, every `eval_interval` steps
/// and at the last step.
pub fn train(config: &TrainConfig, sink: &mut dyn LogSink) -> Result<Checkpoint> {
    config.validate()?;
    let init = ModelParams::init(&config.architecture(), config.seed);
    train_from(config, init, sink)
}

/// Like [`train`], starting from the given parameters.
pub fn train_from(
    config: &TrainConfig,
    init: ModelParams,
    sink: &mut dyn LogSink,
) -> Result<Checkpoint> {
    config.validate()?;
    if init.arch != config.architecture() {
        return Err(Error::ArchitectureMismatch(
            "initial parameters do not match the configuration".into(),
        ));
    }
    let mut session = Session::new(config, init)?;
    session.log(0, sink)?;
    for step in 0..config.steps {
        session.step(step)?;
        let done = step + 1;
        if done % config.eval_interval == 0 || done == config.steps {
            session.log(done, sink)?;
        }
    }
    Ok(Checkpoint {
        params: session.mlp.to_params(),
        config: config.clone(),
        step: config.steps,
        rng_digest: rng_digest(config.seed, &session.order_rng),
    })
}

/// Evaluation of `(1 - ω) A + ω B` at one `ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationPoint {
    pub omega: f64,
    pub evaluation: Evaluation,
}

/// `n + 1` evenly spaced weights from 0 to 1 inclusive.
pub fn omega_grid(n: usize) -> Vec<f64> {
    if n == 0 {
        return vec![0.0];
    }
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

pub fn interpolate_at(
    a: &ModelParams,
    b: &ModelParams,
    omega: f64,
    data: &FeatureMatrix,
    eval_idx: &[usize],
    tau: f64,
) -> Result<InterpolationPoint> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::InvalidConfig(format!(
            "omega {omega} outside [0, 1]"
        )));
    }
    let params = ModelParams::lerp(a, b, omega)?;
    Ok(InterpolationPoint {
        omega,
        evaluation: evaluate(&params, data, eval_idx, tau)?,
    })
}

/// Evaluates the straight line between two checkpoints on `data` at each
/// weight, using checkpoint A's temperature and evaluation subset.
pub fn interpolate(
    a: &Checkpoint,
    b: &Checkpoint,
    omegas: &[f64],
    data: &FeatureMatrix,
) -> Result<Vec<InterpolationPoint>> {
    let idx = eval_indices(data.len(), a.config.seed);
    omegas
        .iter()
        .map(|&w| interpolate_at(&a.params, &b.params, w, data, &idx, a.config.temperature))
        .collect()
}
