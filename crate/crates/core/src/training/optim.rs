//! Optimizer suite. Update rules follow the common PyTorch formulations so
//! that defaults carry their usual meaning.
//!
//! | optimizer      | defaults                                          |
//! |----------------|---------------------------------------------------|
//! | `adam`         | beta1 0.9, beta2 0.999, eps 1e-8, bias-corrected   |
//! | `adamax`       | beta1 0.9, beta2 0.999, eps 1e-8                   |
//! | `adadelta`     | rho 0.9, eps 1e-6                                  |
//! | `adagrad`      | eps 1e-10, accumulator starts at 0                 |
//! | `rmsprop`      | alpha 0.99, eps 1e-8                               |
//! | `momentum_sgd` | momentum 0.9                                       |
//! | `asgd`         | lambda 1e-4, alpha 0.75, averaging from step 1e6   |
//!
//! ASGD only starts averaging after `t0` steps, so at desk scale it behaves as
//! SGD with a slowly decaying step and a small weight decay.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Param;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Adamax,
    Adadelta,
    Adagrad,
    Rmsprop,
    MomentumSgd,
    Asgd,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 7] = [
        OptimizerKind::Adam,
        OptimizerKind::Adamax,
        OptimizerKind::Adadelta,
        OptimizerKind::Adagrad,
        OptimizerKind::Rmsprop,
        OptimizerKind::MomentumSgd,
        OptimizerKind::Asgd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Adamax => "adamax",
            OptimizerKind::Adadelta => "adadelta",
            OptimizerKind::Adagrad => "adagrad",
            OptimizerKind::Rmsprop => "rmsprop",
            OptimizerKind::MomentumSgd => "momentum_sgd",
            OptimizerKind::Asgd => "asgd",
        }
    }

    /// Per-parameter adaptive step sizes.
    pub fn is_adaptive(self) -> bool {
        !matches!(self, OptimizerKind::MomentumSgd | OptimizerKind::Asgd)
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        let alias = match norm.as_str() {
            "sgd" | "momentum" => "momentum_sgd",
            other => other,
        };
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == alias)
            .ok_or_else(|| Error::UnknownOptimizer(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub rmsprop_alpha: f64,
    pub rmsprop_eps: f64,
    pub momentum: f64,
    pub adadelta_rho: f64,
    pub adadelta_eps: f64,
    pub adagrad_eps: f64,
    pub asgd_lambda: f64,
    pub asgd_alpha: f64,
    pub asgd_t0: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            rmsprop_alpha: 0.99,
            rmsprop_eps: 1e-8,
            momentum: 0.9,
            adadelta_rho: 0.9,
            adadelta_eps: 1e-6,
            adagrad_eps: 1e-10,
            asgd_lambda: 1e-4,
            asgd_alpha: 0.75,
            asgd_t0: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub name: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default)]
    pub hyper: Hyperparameters,
}

impl OptimizerConfig {
    pub fn new(name: OptimizerKind, learning_rate: f64) -> Self {
        OptimizerConfig {
            name,
            learning_rate,
            hyper: Hyperparameters::default(),
        }
    }

    pub fn parse(name: &str, learning_rate: f64) -> Result<Self> {
        Ok(Self::new(name.parse()?, learning_rate))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidOptimizer(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Slot {
    Adam { m: ArrayD<f64>, v: ArrayD<f64> },
    Adamax { m: ArrayD<f64>, u: ArrayD<f64> },
    Adadelta { sq: ArrayD<f64>, delta: ArrayD<f64> },
    Adagrad { sum: ArrayD<f64> },
    Rmsprop { sq: ArrayD<f64> },
    Momentum { buf: Option<ArrayD<f64>> },
    Asgd { eta: f64, mu: f64, ax: ArrayD<f64> },
}

/// Optimizer whose state covers exactly a fixed set of parameter paths.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    trainable: BTreeSet<String>,
    slots: BTreeMap<String, Slot>,
    step: u64,
}

pub fn build_optimizer(config: &OptimizerConfig, trainable: &BTreeSet<String>) -> Result<Optimizer> {
    config.validate()?;
    if trainable.is_empty() {
        return Err(Error::InvalidOptimizer("empty trainable set".into()));
    }
    Ok(Optimizer {
        config: config.clone(),
        trainable: trainable.clone(),
        slots: BTreeMap::new(),
        step: 0,
    })
}

impl Optimizer {
    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn trainable(&self) -> &BTreeSet<String> {
        &self.trainable
    }

    /// Paths that currently hold optimizer state.
    pub fn state_keys(&self) -> BTreeSet<String> {
        self.slots.keys().cloned().collect()
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    fn new_slot(&self, p: &Param) -> Slot {
        let z = || ArrayD::zeros(p.value.raw_dim());
        match self.config.name {
            OptimizerKind::Adam => Slot::Adam { m: z(), v: z() },
            OptimizerKind::Adamax => Slot::Adamax { m: z(), u: z() },
            OptimizerKind::Adadelta => Slot::Adadelta { sq: z(), delta: z() },
            OptimizerKind::Adagrad => Slot::Adagrad { sum: z() },
            OptimizerKind::Rmsprop => Slot::Rmsprop { sq: z() },
            OptimizerKind::MomentumSgd => Slot::Momentum { buf: None },
            OptimizerKind::Asgd => Slot::Asgd {
                eta: self.config.learning_rate,
                mu: 1.0,
                ax: z(),
            },
        }
    }

    /// Applies one update to every trainable parameter in `params`, reading
    /// its accumulated gradient. Parameters outside the trainable set are
    /// not touched.
    pub fn step(&mut self, params: Vec<&mut Param>) {
        self.step += 1;
        let t = self.step as f64;
        let lr = self.config.learning_rate;
        let h = self.config.hyper.clone();
        for p in params {
            if !self.trainable.contains(&p.tag.layer_path) {
                continue;
            }
            if !self.slots.contains_key(&p.tag.layer_path) {
                let slot = self.new_slot(p);
                self.slots.insert(p.tag.layer_path.clone(), slot);
            }
            let slot = self.slots.get_mut(&p.tag.layer_path).expect("inserted");
            let Param { value, grad, .. } = p;
            match slot {
                Slot::Adam { m, v } => {
                    let bc1 = 1.0 - h.beta1.powf(t);
                    let bc2 = 1.0 - h.beta2.powf(t);
                    Zip::from(value).and(&*grad).and(m).and(v).for_each(|x, &g, m, v| {
                        *m = h.beta1 * *m + (1.0 - h.beta1) * g;
                        *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
                        let denom = (*v / bc2).sqrt() + h.adam_eps;
                        *x -= lr * (*m / bc1) / denom;
                    });
                }
                Slot::Adamax { m, u } => {
                    let bc1 = 1.0 - h.beta1.powf(t);
                    Zip::from(value).and(&*grad).and(m).and(u).for_each(|x, &g, m, u| {
                        *m = h.beta1 * *m + (1.0 - h.beta1) * g;
                        *u = (h.beta2 * *u).max(g.abs() + h.adam_eps);
                        *x -= lr / bc1 * *m / *u;
                    });
                }
                Slot::Adadelta { sq, delta } => {
                    let rho = h.adadelta_rho;
                    let eps = h.adadelta_eps;
                    Zip::from(value).and(&*grad).and(sq).and(delta).for_each(|x, &g, s, d| {
                        *s = rho * *s + (1.0 - rho) * g * g;
                        let step = (*d + eps).sqrt() / (*s + eps).sqrt() * g;
                        *d = rho * *d + (1.0 - rho) * step * step;
                        *x -= lr * step;
                    });
                }
                Slot::Adagrad { sum } => {
                    Zip::from(value).and(&*grad).and(sum).for_each(|x, &g, s| {
                        *s += g * g;
                        *x -= lr * g / (s.sqrt() + h.adagrad_eps);
                    });
                }
                Slot::Rmsprop { sq } => {
                    let a = h.rmsprop_alpha;
                    Zip::from(value).and(&*grad).and(sq).for_each(|x, &g, s| {
                        *s = a * *s + (1.0 - a) * g * g;
                        *x -= lr * g / (s.sqrt() + h.rmsprop_eps);
                    });
                }
                Slot::Momentum { buf } => {
                    let b = match buf.take() {
                        None => grad.clone(),
                        Some(mut b) => {
                            Zip::from(&mut b).and(&*grad).for_each(|b, &g| *b = h.momentum * *b + g);
                            b
                        }
                    };
                    value.scaled_add(-lr, &b);
                    *buf = Some(b);
                }
                Slot::Asgd { eta, mu, ax } => {
                    let e = *eta;
                    Zip::from(&mut *value).and(&*grad).for_each(|x, &g| {
                        *x *= 1.0 - h.asgd_lambda * e;
                        *x -= e * g;
                    });
                    if *mu != 1.0 {
                        let m = *mu;
                        Zip::from(ax).and(&*value).for_each(|a, &x| *a += (x - *a) * m);
                    } else {
                        ax.assign(value);
                    }
                    *eta = lr / (1.0 + h.asgd_lambda * lr * t).powf(h.asgd_alpha);
                    *mu = 1.0 / (t - h.asgd_t0).max(1.0);
                }
            }
        }
    }
}
