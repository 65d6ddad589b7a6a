use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::{format_percent, ExperimentConfig, Method};
use crate::error::Result;

/// One finished run. `accuracy` is a fraction in [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub label: String,
    pub method: Method,
    pub data_fraction: f64,
    pub per_iter: f64,
    pub target: f64,
    pub activation: String,
    pub lambda_rl1: f64,
    pub accuracy: f64,
    pub seed: u64,
}

impl ResultsRow {
    pub fn from_config(cfg: &ExperimentConfig, accuracy: f64) -> Self {
        ResultsRow {
            label: cfg.label(),
            method: cfg.method,
            data_fraction: cfg.data_fraction,
            per_iter: cfg.per_iter,
            target: cfg.target,
            activation: cfg.activation.name().to_string(),
            lambda_rl1: cfg.lambda_rl1,
            accuracy,
            seed: cfg.seed,
        }
    }
}

/// Markdown for reading, CSV as the exact record.
pub fn emit_tables(rows: &[ResultsRow]) -> Result<(String, String)> {
    let mut md = String::from("| method | activation | lambda | data | per-iter | target | accuracy (%) | seed |\n");
    md.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} | {:.2} | {} |",
            r.label,
            r.activation,
            r.lambda_rl1,
            format_percent(r.data_fraction),
            format_percent(r.per_iter),
            format_percent(r.target),
            r.accuracy * 100.0,
            r.seed
        );
    }
    Ok((md, rows_to_csv(rows)?))
}

pub fn rows_to_csv(rows: &[ResultsRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["label", "method", "data_fraction", "per_iter", "target", "activation", "lambda_rl1", "accuracy", "seed"])?;
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_rows(text: &str) -> Result<Vec<ResultsRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<std::result::Result<Vec<ResultsRow>, _>>()?)
}
