use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    /// Heavy-ball SGD with L2 weight decay folded into the gradient.
    Sgd { momentum: f64, weight_decay: f64 },
    /// Adam with decoupled weight decay.
    AdamW {
        weight_decay: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl OptimizerConfig {
    pub fn sgd() -> Self {
        OptimizerConfig::Sgd {
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }

    pub fn adamw(weight_decay: f64) -> Self {
        OptimizerConfig::AdamW {
            weight_decay,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
        }
    }
}

/// `lr0 * (1 + cos(π t / T)) / 2`
pub fn cosine_lr(lr0: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    let progress = step as f64 / total as f64;
    0.5 * lr0 * (1.0 + (std::f64::consts::PI * progress).cos())
}

pub(crate) struct Optimizer {
    config: OptimizerConfig,
    first: Vec<DMatrix<f64>>,
    second: Vec<DMatrix<f64>>,
    steps: i32,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &[DMatrix<f64>]) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| DMatrix::zeros(p.nrows(), p.ncols()))
                .collect()
        };
        let second = match config {
            OptimizerConfig::AdamW { .. } => zeros(),
            OptimizerConfig::Sgd { .. } => Vec::new(),
        };
        Self {
            config,
            first: zeros(),
            second,
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut [DMatrix<f64>], grads: &[DMatrix<f64>], lr: f64) {
        self.steps += 1;
        match self.config {
            OptimizerConfig::Sgd {
                momentum,
                weight_decay,
            } => {
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    let g = g + &*p * weight_decay;
                    *v = &*v * momentum + g;
                    *p -= &*v * lr;
                }
            }
            OptimizerConfig::AdamW {
                weight_decay,
                beta1,
                beta2,
                eps,
            } => {
                let c1 = 1.0 - beta1.powi(self.steps);
                let c2 = 1.0 - beta2.powi(self.steps);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    *p *= 1.0 - lr * weight_decay;
                    *m = &*m * beta1 + g * (1.0 - beta1);
                    *v = &*v * beta2 + g.component_mul(g) * (1.0 - beta2);
                    let update = m.zip_map(v, |m, v| (m / c1) / ((v / c2).sqrt() + eps));
                    *p -= update * lr;
                }
            }
        }
    }
}
