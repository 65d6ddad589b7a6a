use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use aplab_core::dataset::{sample_subset, SubsetSpec};
use aplab_core::infometrics::{blind_range_occupancy, mi_layer_estimates, HistogramEstimator};
use aplab_core::network::{load_checkpoint, save_checkpoint, PruneMask};
use aplab_core::pruner::evaluate;
use aplab_harness::reproduce::DEFAULT_SEEDS;
use aplab_harness::{
    emit_tables, reproduce_table, run_experiment, table_cells, write_outputs, Activation, BaselineCache, ExperimentConfig, Method, Mnist,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "aplab", version, about = "Activation-statistics pruning experiments on MNIST")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    activation: Option<Activation>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    target: Option<f64>,
    #[arg(long)]
    per_iter: Option<f64>,
    #[arg(long)]
    data_fraction: Option<f64>,
    /// Draw a new scoring subset every pruning iteration.
    #[arg(long)]
    resample_subset: bool,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    layer_factor: Option<Switch>,
    /// Denominator guard in the per-sample contribution ratio.
    #[arg(long)]
    contribution_eps: Option<f64>,
    #[arg(long)]
    lambda_rl1: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    fine_tune_lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Directory of cached baselines.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Always retrain the baseline.
    #[arg(long)]
    no_cache: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train (or fetch from cache) the unpruned baseline.
    Train(#[command(flatten)] Overrides),
    /// Train or load the baseline, then prune iteratively.
    Prune(#[command(flatten)] Overrides),
    /// Test accuracy and sparsity of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Per-weight mutual information between activation and weight presence.
    MiReport {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1)]
        layer: usize,
        #[arg(long, default_value_t = 2000)]
        sample_cap: usize,
        #[arg(long, default_value_t = 64)]
        bins: usize,
        /// Limit the report to the first N input rows.
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Fraction of hidden pre-activations inside the blind range.
    Occupancy {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the grid behind one of the result tables.
    Reproduce {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
        table: u8,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Print the grid without running it.
        #[arg(long)]
        list: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn effective_config(file: Option<&Path>, o: &Overrides) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match file {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = o.$field.clone() { cfg.$field = v; } )* };
    }
    set!(activation, method, target, per_iter, data_fraction, alpha, beta, contribution_eps, lambda_rl1, epochs, lr, fine_tune_lr, batch_size, seed, data_dir, out_dir);
    if let Some(s) = o.layer_factor {
        cfg.layer_factor = matches!(s, Switch::On);
    }
    if o.cache_dir.is_some() {
        cfg.cache_dir = o.cache_dir.clone();
    }
    if o.resample_subset {
        cfg.resample_subset = true;
    }
    if o.no_cache {
        cfg.cache_dir = None;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn snapshot(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    fs::write(cfg.out_dir.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = cli.config.as_deref();
    match cli.command {
        Command::Train(o) => {
            let cfg = effective_config(file, &o)?;
            snapshot(&cfg)?;
            let data = Mnist::load(&cfg.data_dir)?;
            let mut cache = BaselineCache::new(cfg.cache_dir.clone());
            let (model, cached) = cache.get_or_train(&cfg, &data.train)?;
            let mask = PruneMask::all_active(&model);
            save_checkpoint(&model, &mask, cfg.out_dir.join("baseline.ckpt"))?;
            let acc = evaluate(&model, &mask, &data.test)?;
            println!("baseline{} accuracy {:.2}%", if cached { " (cached)" } else { "" }, acc * 100.0);
        }
        Command::Prune(o) => {
            let cfg = effective_config(file, &o)?;
            snapshot(&cfg)?;
            let data = Mnist::load(&cfg.data_dir)?;
            let mut cache = BaselineCache::new(cfg.cache_dir.clone());
            let outcome = run_experiment(&cfg, &data, &mut cache)?;
            write_outputs(&cfg, &outcome, &cfg.out_dir)?;
            for r in &outcome.report.records {
                println!("iter {:>2}  sparsity {:.4}  accuracy {:.2}%  {:.1}s", r.iteration, r.sparsity, r.accuracy * 100.0, r.seconds);
            }
            print!("{}", emit_tables(std::slice::from_ref(&outcome.row))?.0);
        }
        Command::Eval { checkpoint, overrides } => {
            let cfg = effective_config(file, &overrides)?;
            let data = Mnist::load(&cfg.data_dir)?;
            let (model, mask) = load_checkpoint(&checkpoint)?;
            let acc = evaluate(&model, &mask, &data.test)?;
            println!("accuracy {:.2}%  sparsity {:.4}", acc * 100.0, mask.sparsity());
            for (l, m) in mask.layers().iter().enumerate() {
                let (rows, cols) = m.shape();
                println!("layer {l} ({rows}x{cols}): sparsity {:.4}", 1.0 - m.active_count() as f64 / (rows * cols) as f64);
            }
        }
        Command::MiReport { checkpoint, layer, sample_cap, bins, rows, output, overrides } => {
            let cfg = effective_config(file, &overrides)?;
            let data = Mnist::load(&cfg.data_dir)?;
            let (model, mask) = load_checkpoint(&checkpoint)?;
            let subset = sample_subset(&data.train, &SubsetSpec::new(cfg.data_fraction, cfg.seed)?)?;
            let est = HistogramEstimator::new(bins, None)?;
            let estimates = mi_layer_estimates(&model, &mask, &subset.images, layer, &est, sample_cap, rows.unwrap_or(usize::MAX))?;
            let mut out = csv::Writer::from_writer(Vec::new());
            out.write_record(["layer", "row", "col", "mi_nats", "h_marginal", "h_conditional"])?;
            for (i, j, mi) in estimates {
                out.write_record([layer.to_string(), i.to_string(), j.to_string(), mi.value.to_string(), mi.h_marginal.to_string(), mi.h_conditional.to_string()])?;
            }
            let text = String::from_utf8(out.into_inner()?)?;
            match output {
                Some(p) => fs::write(p, text)?,
                None => print!("{text}"),
            }
        }
        Command::Occupancy { checkpoint, tol, overrides } => {
            let cfg = effective_config(file, &overrides)?;
            let data = Mnist::load(&cfg.data_dir)?;
            let (model, mask) = load_checkpoint(&checkpoint)?;
            let occ = blind_range_occupancy(&model, &mask, &data.test.images, tol)?;
            println!("layer,fraction");
            for (l, f) in occ.layers.iter().enumerate() {
                println!("{l},{f}");
            }
        }
        Command::Reproduce { table, seeds, list, overrides } => {
            let cfg = effective_config(file, &overrides)?;
            let seeds = seeds.unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
            if list {
                for cell in table_cells(table, &cfg)? {
                    println!("{} | {} | published {:.2}", cell.row, cell.column, cell.published);
                }
                return Ok(());
            }
            snapshot(&cfg)?;
            let data = Mnist::load(&cfg.data_dir)?;
            let mut cache = BaselineCache::new(cfg.cache_dir.clone());
            let rep = reproduce_table(table, &seeds, &cfg, &data, &mut cache, |line| eprintln!("{line}"))?;
            let md = rep.markdown();
            fs::write(cfg.out_dir.join(format!("table{table}.md")), &md)?;
            fs::write(cfg.out_dir.join(format!("table{table}.csv")), rep.summary_csv()?)?;
            fs::write(cfg.out_dir.join(format!("table{table}_runs.csv")), rep.runs_csv()?)?;
            print!("{md}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
