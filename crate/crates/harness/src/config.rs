use std::fmt;
use std::path::{Path, PathBuf};

use aplab_core::dataset::SubsetSpec;
use aplab_core::network::{FineTuneConfig, LossConfig, TrainConfig};
use aplab_core::numerics::ActivationKind;
use aplab_core::pruner::{PruneConfig, PruneSchedule};
use aplab_core::scoring::{ImportanceConfig, ScorerKind};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn kind(self, leaky_slope: f32) -> ActivationKind {
        match self {
            Activation::Relu => ActivationKind::Relu,
            Activation::LeakyRelu => ActivationKind::LeakyRelu { slope: leaky_slope },
            Activation::Sigmoid => ActivationKind::Sigmoid,
            Activation::Tanh => ActivationKind::Tanh,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky-relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Contribution,
    Magnitude,
    Wanda,
    Random,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Contribution => "contribution",
            Method::Magnitude => "magnitude",
            Method::Wanda => "wanda",
            Method::Random => "random",
        }
    }

    pub fn uses_data(self) -> bool {
        matches!(self, Method::Contribution | Method::Wanda)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything needed to reproduce one train + prune run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub activation: Activation,
    pub leaky_slope: f32,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub lambda_rl1: f64,
    pub fine_tune_epochs: usize,
    pub fine_tune_lr: f64,
    pub method: Method,
    pub alpha: f64,
    pub beta: f64,
    pub eps: f64,
    pub contribution_eps: f64,
    pub layer_factor: bool,
    pub data_fraction: f64,
    pub resample_subset: bool,
    pub target: f64,
    pub per_iter: f64,
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            activation: Activation::Relu,
            leaky_slope: 0.01,
            epochs: 10,
            lr: 1e-3,
            batch_size: 64,
            lambda_rl1: 0.0,
            fine_tune_epochs: 1,
            fine_tune_lr: 1e-4,
            method: Method::Contribution,
            alpha: 1.0,
            beta: 1e-7,
            eps: 1e-12,
            contribution_eps: aplab_core::scoring::CONTRIBUTION_EPS,
            layer_factor: true,
            data_fraction: 1.0,
            resample_subset: false,
            target: 0.5,
            per_iter: 0.25,
            seed: 0,
            data_dir: PathBuf::from("data/mnist"),
            out_dir: PathBuf::from("runs/latest"),
            cache_dir: Some(PathBuf::from("runs/cache")),
        }
    }
}

fn bad(key: &str, msg: impl Into<String>) -> HarnessError {
    HarnessError::Config { key: key.to_string(), msg: msg.into() }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| bad("file", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let ratio = |key: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(bad(key, format!("must be in (0, 1], got {v}")))
            }
        };
        ratio("data_fraction", self.data_fraction)?;
        ratio("per_iter", self.per_iter)?;
        if !(self.target > 0.0 && self.target < 1.0) {
            return Err(bad("target", format!("must be in (0, 1), got {}", self.target)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(bad("lr", format!("must be > 0, got {}", self.lr)));
        }
        if !(self.fine_tune_lr > 0.0 && self.fine_tune_lr.is_finite()) {
            return Err(bad("fine_tune_lr", format!("must be > 0, got {}", self.fine_tune_lr)));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be >= 1"));
        }
        if !(self.lambda_rl1 >= 0.0 && self.lambda_rl1.is_finite()) {
            return Err(bad("lambda_rl1", format!("must be >= 0, got {}", self.lambda_rl1)));
        }
        if !(self.eps > 0.0) {
            return Err(bad("eps", format!("must be > 0, got {}", self.eps)));
        }
        if !(self.contribution_eps > 0.0 && self.contribution_eps.is_finite()) {
            return Err(bad("contribution_eps", format!("must be > 0, got {}", self.contribution_eps)));
        }
        if !(self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(bad("beta", "alpha and beta must be finite"));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(bad("leaky_slope", format!("must be in (0, 1), got {}", self.leaky_slope)));
        }
        Ok(())
    }

    pub fn activation_kind(&self) -> ActivationKind {
        self.activation.kind(self.leaky_slope)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            loss: LossConfig { lambda_rl1: self.lambda_rl1 },
            seed: self.seed,
        }
    }

    pub fn scorer(&self) -> ScorerKind {
        let subset = SubsetSpec { fraction: self.data_fraction, seed: self.seed };
        match self.method {
            Method::Contribution => ScorerKind::Contribution {
                importance: ImportanceConfig {
                    alpha: self.alpha,
                    beta: self.beta,
                    eps: self.eps,
                    layer_factor: self.layer_factor,
                    contribution_eps: self.contribution_eps,
                    ..ImportanceConfig::default()
                },
                subset,
            },
            Method::Magnitude => ScorerKind::Magnitude,
            Method::Wanda => ScorerKind::Wanda { subset },
            Method::Random => ScorerKind::Random { seed: self.seed },
        }
    }

    pub fn prune_config(&self) -> Result<PruneConfig> {
        Ok(PruneConfig {
            schedule: PruneSchedule::new(self.target, self.per_iter).map_err(|e| bad("target", e.to_string()))?,
            scorer: self.scorer(),
            fine_tune: FineTuneConfig {
                epochs: self.fine_tune_epochs,
                lr: self.fine_tune_lr,
                batch_size: self.batch_size,
                loss: LossConfig { lambda_rl1: self.lambda_rl1 },
            },
            seed: self.seed,
            resample_subset: self.resample_subset,
        })
    }

    /// Row label in the style of the published tables, e.g. `Ours (2%)`.
    pub fn label(&self) -> String {
        let pct = format_percent(self.data_fraction);
        match self.method {
            Method::Contribution => format!("Ours ({pct})"),
            Method::Wanda => format!("Wanda ({pct})"),
            Method::Magnitude => "Magnitude".into(),
            Method::Random => "Random".into(),
        }
    }
}

pub fn format_percent(fraction: f64) -> String {
    let p = fraction * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}%", p.round())
    } else {
        format!("{}%", (p * 1000.0).round() / 1000.0)
    }
}
