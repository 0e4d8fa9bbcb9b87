use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use matinfo::collapse::simplex_etf;
use matinfo::linalg::gram;
use matinfo::metrics::{effective_rank, effective_rank_of, hdr, matrix_entropy, matrix_mi, mir};
use matinfo::trainer::{
    eval_indices, interpolate_at, omega_grid, train, Checkpoint, Dataset, DatasetConfig, HeadKind,
    JsonlSink, LossConfig, OptimizerConfig, SemiSupervised, TrainConfig, RELU,
    RELU_LINEAR_FEATURES,
};
use matinfo::{FeatureMatrix, GramMatrix};
use rayon::prelude::*;

use crate::error::{CliError, CliResult};
use crate::format_scalar;
use crate::io::{read_labels, read_matrix, write_npy};
use crate::verify::{run_suite, Suite};

#[derive(Debug, Parser)]
#[command(
    name = "matinfo",
    version,
    about = "Matrix information metrics and neural collapse tools"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Matrix entropy of G(Z), or of a Gram matrix with --as-gram
    Entropy(OneInput),
    /// Effective rank of a feature matrix (or of the Gram matrix itself)
    Erank(OneInput),
    /// Matrix mutual information between two Gram matrices
    Mi(TwoInputs),
    /// Mutual information ratio
    Mir(TwoInputs),
    /// Entropy difference ratio
    Hdr(TwoInputs),
    /// Write a simplex ETF (dim x classes) as an f8 npy file
    Etf(EtfArgs),
    /// Report neural collapse residuals as JSON
    NcCheck(NcCheckArgs),
    /// Run a property suite
    Verify(VerifyArgs),
    /// Train an MLP, logging metrics as JSON lines
    Train(Box<TrainArgs>),
    /// Evaluate the straight line between two checkpoints
    Interpolate(InterpolateArgs),
}

#[derive(Debug, Args)]
pub struct OneInput {
    pub input: PathBuf,
    /// The file holds an N x N Gram matrix rather than d x N features
    #[arg(long)]
    pub as_gram: bool,
}

#[derive(Debug, Args)]
pub struct TwoInputs {
    pub first: PathBuf,
    pub second: PathBuf,
    /// The files hold N x N Gram matrices rather than d x N features
    #[arg(long)]
    pub as_gram: bool,
}

#[derive(Debug, Args)]
pub struct EtfArgs {
    #[arg(long)]
    pub classes: usize,
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NcCheckArgs {
    /// d x N features
    #[arg(long)]
    pub features: PathBuf,
    /// N class labels
    #[arg(long)]
    pub labels: PathBuf,
    /// d x C classifier weights, one column per class
    #[arg(long)]
    pub weights: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SuiteArg {
    Nc,
    Lemmas,
    Gradients,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum)]
    pub suite: SuiteArg,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub instances: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetArg {
    Blobs,
    Modadd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    #[value(name = "ce")]
    Ce,
    #[value(name = "ce+mi")]
    CeMi,
    #[value(name = "ce+hd")]
    CeHd,
    #[value(name = "ce+cma")]
    CeCma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adamw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeadArg {
    Linear,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ActivationArg {
    Relu,
    ReluLinearFeatures,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value = "blobs")]
    pub dataset: DatasetArg,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 32)]
    pub input_dim: usize,
    #[arg(long, default_value_t = 200)]
    pub per_class: usize,
    #[arg(long, default_value_t = 100)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Modulus for the modular-addition dataset
    #[arg(long, default_value_t = 113)]
    pub p: usize,
    #[arg(long, default_value_t = 0.3)]
    pub train_fraction: f64,

    #[arg(long, value_enum, default_value = "ce")]
    pub loss: LossArg,
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub temperature: f64,
    #[arg(long, value_enum, default_value = "sgd")]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Defaults to 5e-4 for SGD and 1e-2 for AdamW
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long, default_value_t = 0.03)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed for the batch order; defaults to --seed
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long, value_delimiter = ',', default_value = "128,128")]
    pub hidden: Vec<usize>,
    #[arg(long, value_enum, default_value = "relu")]
    pub activation: ActivationArg,
    #[arg(long, value_enum, default_value = "linear")]
    pub head: HeadArg,
    #[arg(long, default_value_t = 100)]
    pub eval_interval: usize,
    /// Keep MI/HD/CMA gradients away from the classifier weights
    #[arg(long)]
    pub no_info_grad_to_weights: bool,

    /// Enables pseudo-labeling: labeled samples per class
    #[arg(long)]
    pub labeled_per_class: Option<usize>,
    #[arg(long, default_value_t = 7)]
    pub unlabeled_ratio: usize,
    #[arg(long, default_value_t = 0.95)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0.1)]
    pub weak_noise: f64,
    #[arg(long, default_value_t = 0.5)]
    pub strong_noise: f64,

    /// JSONL metrics log; stdout when absent
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub ckpt_out: Option<PathBuf>,
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        let dataset = match self.dataset {
            DatasetArg::Blobs => DatasetConfig::Blobs {
                classes: self.classes,
                input_dim: self.input_dim,
                per_class: self.per_class,
                test_per_class: self.test_per_class,
                separation: self.separation,
                noise: self.noise,
            },
            DatasetArg::Modadd => DatasetConfig::ModAdd {
                p: self.p,
                train_fraction: self.train_fraction,
            },
        };
        let lambda = self.lambda;
        let loss = match self.loss {
            LossArg::Ce => LossConfig::Ce,
            LossArg::CeMi => LossConfig::CeMi { lambda },
            LossArg::CeHd => LossConfig::CeHd { lambda },
            LossArg::CeCma => LossConfig::CeCma { lambda },
        };
        let optimizer = match self.optimizer {
            OptimizerArg::Sgd => OptimizerConfig::Sgd {
                momentum: self.momentum,
                weight_decay: self.weight_decay.unwrap_or(5e-4),
            },
            OptimizerArg::Adamw => OptimizerConfig::adamw(self.weight_decay.unwrap_or(1e-2)),
        };
        TrainConfig {
            dataset,
            loss,
            temperature: self.temperature,
            optimizer,
            lr: self.lr,
            batch_size: self.batch_size,
            steps: self.steps,
            seed: self.seed,
            data_seed: self.data_seed,
            hidden: self.hidden.clone(),
            activation: match self.activation {
                ActivationArg::Relu => RELU,
                ActivationArg::ReluLinearFeatures => RELU_LINEAR_FEATURES,
            }
            .into(),
            head: match self.head {
                HeadArg::Linear => HeadKind::Linear,
                HeadArg::Cosine => HeadKind::Cosine,
            },
            eval_interval: self.eval_interval,
            info_grad_to_weights: !self.no_info_grad_to_weights,
            semi_supervised: self
                .labeled_per_class
                .map(|labeled_per_class| SemiSupervised {
                    labeled_per_class,
                    unlabeled_ratio: self.unlabeled_ratio,
                    threshold: self.threshold,
                    weak_noise: self.weak_noise,
                    strong_noise: self.strong_noise,
                }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub ckpt_a: PathBuf,
    #[arg(long)]
    pub ckpt_b: PathBuf,
    /// Number of intervals; n + 1 weights from 0 to 1 are evaluated
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    /// Split of checkpoint A's dataset to evaluate on
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Evaluate on these d x N features instead (requires --labels)
    #[arg(long, requires = "labels")]
    pub features: Option<PathBuf>,
    #[arg(long, requires = "features")]
    pub labels: Option<PathBuf>,
    /// CSV output; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load_gram(path: &Path, as_gram: bool) -> CliResult<GramMatrix> {
    let m = read_matrix(path)?;
    if as_gram {
        Ok(GramMatrix::new(m)?)
    } else {
        Ok(gram(&FeatureMatrix::new(m)?)?)
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn stdout_error(e: std::io::Error) -> CliError {
    CliError::io(Path::new("<stdout>"), e)
}

fn read_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Checkpoint::from_json(&text).map_err(|e| CliError::parse(path, e))
}

fn pair_metric(
    args: &TwoInputs,
    f: fn(&GramMatrix, &GramMatrix) -> matinfo::Result<f64>,
) -> CliResult<f64> {
    let a = load_gram(&args.first, args.as_gram)?;
    let b = load_gram(&args.second, args.as_gram)?;
    Ok(f(&a, &b)?)
}

fn run_train(args: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let config = args.config();
    let ckpt = match &args.log {
        Some(path) => {
            let mut sink = JsonlSink(create(path)?);
            let ckpt = train(&config, &mut sink)?;
            sink.0.flush().map_err(|e| CliError::io(path, e))?;
            ckpt
        }
        None => train(&config, &mut JsonlSink(&mut *out))?,
    };
    if let Some(path) = &args.ckpt_out {
        let mut w = create(path)?;
        w.write_all(ckpt.to_json().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

fn omega_precision(steps: usize) -> usize {
    steps.max(1).to_string().len().max(2)
}

fn run_interpolate(args: &InterpolateArgs, out: &mut dyn Write) -> CliResult<()> {
    let a = read_checkpoint(&args.ckpt_a)?;
    let b = read_checkpoint(&args.ckpt_b)?;
    let data = match (&args.features, &args.labels) {
        (Some(f), Some(l)) => FeatureMatrix::with_labels(read_matrix(f)?, read_labels(l)?, None)?,
        _ => {
            let ds = Dataset::build(&a.config.dataset, a.config.seed)?;
            match args.split {
                SplitArg::Train => ds.train,
                SplitArg::Test => ds.test,
            }
        }
    };
    let idx = eval_indices(data.len(), a.config.seed);
    let tau = a.config.temperature;
    let points = omega_grid(args.steps)
        .into_par_iter()
        .map(|w| interpolate_at(&a.params, &b.params, w, &data, &idx, tau))
        .collect::<matinfo::Result<Vec<_>>>()?;

    let mut text = String::from("omega,accuracy,mir,hdr\n");
    let prec = omega_precision(args.steps);
    for p in &points {
        let e = &p.evaluation;
        text.push_str(&format!(
            "{:.prec$},{},{},{}\n",
            p.omega,
            format_scalar(e.accuracy),
            format_scalar(e.mir),
            format_scalar(e.hdr)
        ));
    }
    match &args.out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::io(path, e)),
        None => out.write_all(text.as_bytes()).map_err(stdout_error),
    }
}

/// Executes a parsed command, writing results to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    let scalar = match &cli.command {
        Command::Entropy(a) => Some(matrix_entropy(&load_gram(&a.input, a.as_gram)?)),
        Command::Erank(a) => {
            let m = read_matrix(&a.input)?;
            Some(if a.as_gram {
                effective_rank_of(GramMatrix::new(m)?.data())?
            } else {
                effective_rank(&FeatureMatrix::new(m)?)?
            })
        }
        Command::Mi(a) => Some(pair_metric(a, matrix_mi)?),
        Command::Mir(a) => Some(pair_metric(a, mir)?),
        Command::Hdr(a) => Some(pair_metric(a, hdr)?),
        _ => None,
    };
    if let Some(x) = scalar {
        return writeln!(out, "{}", format_scalar(x)).map_err(stdout_error);
    }

    match &cli.command {
        Command::Etf(a) => {
            let etf = simplex_etf(a.classes, a.dim, a.seed)?;
            write_npy(&a.out, etf.data())
        }
        Command::NcCheck(a) => {
            let features = read_matrix(&a.features)?;
            let labels = read_labels(&a.labels)?;
            let weights = FeatureMatrix::new(read_matrix(&a.weights)?)?;
            let features = FeatureMatrix::with_labels(features, labels, Some(weights.len()))?;
            let report = matinfo::collapse::nc_check(&features, &weights)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            writeln!(out, "{json}").map_err(stdout_error)
        }
        Command::Verify(a) => {
            let suite = match a.suite {
                SuiteArg::Nc => Suite::Nc,
                SuiteArg::Lemmas => Suite::Lemmas,
                SuiteArg::Gradients => Suite::Gradients,
            };
            let report = run_suite(suite, a.instances as usize, a.seed)?;
            let mut text = String::new();
            for r in report.failures() {
                text.push_str(&format!(
                    "FAIL seed {}: {}\n",
                    r.seed,
                    r.failure.as_deref().unwrap_or_default()
                ));
            }
            let failed = report.failures().count();
            let total = report.instances.len();
            text.push_str(&format!(
                "{}: {}/{} instances passed, max error {:.3e}\n",
                suite.name(),
                total - failed,
                total,
                report.max_error()
            ));
            out.write_all(text.as_bytes()).map_err(stdout_error)?;
            if failed > 0 {
                return Err(CliError::Verification(format!(
                    "{} of {total} {} instances failed",
                    failed,
                    suite.name()
                )));
            }
            Ok(())
        }
        Command::Train(a) => run_train(a, out),
        Command::Interpolate(a) => run_interpolate(a, out),
        Command::Entropy(_)
        | Command::Erank(_)
        | Command::Mi(_)
        | Command::Mir(_)
        | Command::Hdr(_) => {
            unreachable!("scalar commands return above")
        }
    }
}
