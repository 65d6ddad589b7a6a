use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use aplab_core::dataset::{load_mnist, MnistSplit};
use aplab_core::network::{default_architecture, load_checkpoint, save_checkpoint, train, MlpModel, PruneMask};
use aplab_core::pruner::{evaluate, prune_iteratively, PruneReport};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::tables::{emit_tables, ResultsRow};

pub struct Mnist {
    pub train: MnistSplit,
    pub test: MnistSplit,
}

impl Mnist {
    pub fn load(dir: &Path) -> Result<Self> {
        let (train, test) = load_mnist(dir).map_err(|e| HarnessError::Input(format!("MNIST not usable at {}: {e}", dir.display())))?;
        Ok(Mnist { train, test })
    }
}

/// Trained baselines keyed by everything that influences training.
pub struct BaselineCache {
    dir: Option<PathBuf>,
    memory: HashMap<String, MlpModel>,
}

impl BaselineCache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        BaselineCache { dir, memory: HashMap::new() }
    }

    pub fn key(cfg: &ExperimentConfig) -> String {
        let specs = default_architecture(cfg.activation_kind());
        let arch: Vec<String> = std::iter::once(specs[0].in_dim).chain(specs.iter().map(|s| s.out_dim)).map(|d| d.to_string()).collect();
        format!(
            "baseline_{}_{}_slope{}_l{}_s{}_e{}_lr{}_b{}",
            arch.join("-"),
            cfg.activation,
            cfg.leaky_slope,
            cfg.lambda_rl1,
            cfg.seed,
            cfg.epochs,
            cfg.lr,
            cfg.batch_size
        )
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.ckpt")))
    }

    /// Returns the baseline and whether it came from the cache.
    pub fn get_or_train(&mut self, cfg: &ExperimentConfig, data: &MnistSplit) -> Result<(MlpModel, bool)> {
        let key = Self::key(cfg);
        if let Some(m) = self.memory.get(&key) {
            return Ok((m.clone(), true));
        }
        if let Some(path) = self.path(&key).filter(|p| p.exists()) {
            let (model, _) = load_checkpoint(&path)?;
            self.memory.insert(key, model.clone());
            return Ok((model, true));
        }
        let model = train_baseline(cfg, data)?;
        if let Some(path) = self.path(&key) {
            fs::create_dir_all(path.parent().unwrap())?;
            save_checkpoint(&model, &PruneMask::all_active(&model), &path)?;
        }
        self.memory.insert(key, model.clone());
        Ok((model, false))
    }
}

pub fn train_baseline(cfg: &ExperimentConfig, data: &MnistSplit) -> Result<MlpModel> {
    let mut model = MlpModel::he_uniform(&default_architecture(cfg.activation_kind()), cfg.seed)?;
    let mask = PruneMask::all_active(&model);
    train(&mut model, &mask, data, &cfg.train_config())?;
    Ok(model)
}

pub struct ExperimentOutcome {
    pub row: ResultsRow,
    pub report: PruneReport,
    pub baseline_accuracy: f64,
    pub model: MlpModel,
    pub mask: PruneMask,
    pub seconds: f64,
}

/// Baseline (trained or cached) followed by the configured pruning run.
pub fn run_experiment(cfg: &ExperimentConfig, data: &Mnist, cache: &mut BaselineCache) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let prune_cfg = cfg.prune_config()?;
    let (baseline, _) = cache.get_or_train(cfg, &data.train)?;
    let baseline_accuracy = evaluate(&baseline, &PruneMask::all_active(&baseline), &data.test)?;
    let out = prune_iteratively(baseline, &data.train, &data.test, &prune_cfg)?;
    let row = ResultsRow::from_config(cfg, out.report.final_accuracy());
    Ok(ExperimentOutcome {
        row,
        report: out.report,
        baseline_accuracy,
        model: out.model,
        mask: out.mask,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Config snapshot, per-iteration report, final checkpoint and results row.
pub fn write_outputs(cfg: &ExperimentConfig, outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let mut report = Vec::new();
    outcome.report.write_csv(&mut report)?;
    fs::write(dir.join("report.csv"), report)?;
    save_checkpoint(&outcome.model, &outcome.mask, dir.join("final.ckpt"))?;
    let (md, csv) = emit_tables(std::slice::from_ref(&outcome.row))?;
    fs::write(dir.join("results.csv"), csv)?;
    fs::write(dir.join("results.md"), md)?;
    Ok(())
}
