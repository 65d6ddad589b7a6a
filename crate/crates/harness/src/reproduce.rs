//! Grids behind the five published result tables, with the published value
//! of every cell kept next to the reproduced mean.

use std::fmt::Write as _;

use serde::Serialize;

use crate::config::{Activation, ExperimentConfig, Method};
use crate::error::{HarnessError, Result};
use crate::experiment::{run_experiment, BaselineCache, Mnist};
use crate::tables::{rows_to_csv, ResultsRow};

pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];
/// Regularization strength used for the pruning-aware training table.
pub const TABLE5_LAMBDA: f64 = 1e-4;

const PER_ITER: [f64; 4] = [0.25, 0.15, 0.10, 0.05];

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub row: String,
    pub column: String,
    pub config: ExperimentConfig,
    /// Published accuracy in percent.
    pub published: f64,
}

fn method(base: &ExperimentConfig, m: Method, fraction: f64) -> ExperimentConfig {
    ExperimentConfig { method: m, data_fraction: fraction, ..base.clone() }
}

fn per_iter_cells(rows: &[(String, ExperimentConfig, [f64; 4])], prefix: &str) -> Vec<Cell> {
    let mut cells = Vec::new();
    for (label, cfg, published) in rows {
        for (p, &value) in PER_ITER.iter().zip(published) {
            cells.push(Cell {
                row: label.clone(),
                column: format!("{prefix}{}%", (p * 100.0).round()),
                config: ExperimentConfig { per_iter: *p, target: 0.5, ..cfg.clone() },
                published: value,
            });
        }
    }
    cells
}

fn table1(base: &ExperimentConfig) -> Vec<Cell> {
    let ours = |beta: f64, s: bool| ExperimentConfig { beta, layer_factor: s, ..method(base, Method::Contribution, 0.005) };
    let rows = vec![
        ("a=1, b=1e-7, w/o s".to_string(), ours(1e-7, false), [97.61, 97.45, 97.91, 97.93]),
        ("a=1, b=0, w/ s".to_string(), ours(0.0, true), [97.62, 97.49, 97.90, 98.0]),
        ("a=1, b=1e-5, w/ s".to_string(), ours(1e-5, true), [96.14, 96.63, 97.28, 97.59]),
        ("a=1, b=1e-7, w/ s".to_string(), ours(1e-7, true), [97.84, 97.52, 97.92, 98.03]),
    ];
    per_iter_cells(&rows, "")
}

fn table2(base: &ExperimentConfig) -> Vec<Cell> {
    let mut rows = vec![
        (method(base, Method::Random, 1.0), [93.19, 91.24, 79.22, 9.80]),
        (method(base, Method::Magnitude, 1.0), [97.29, 97.77, 97.99, 98.11]),
    ];
    let wanda = [
        [97.47, 97.72, 98.16, 98.3],
        [97.44, 97.82, 98.18, 98.32],
        [97.4, 97.87, 98.21, 98.33],
        [97.38, 97.86, 98.2, 98.28],
        [97.41, 97.91, 97.92, 98.26],
        [97.42, 97.96, 97.98, 98.31],
    ];
    let ours = [
        [97.84, 97.52, 97.92, 98.03],
        [98.04, 98.11, 98.37, 98.33],
        [98.26, 98.36, 98.41, 98.34],
        [98.24, 98.35, 98.47, 98.41],
        [98.36, 98.34, 98.38, 98.40],
        [98.29, 98.36, 98.30, 98.44],
    ];
    let fractions = [0.005, 0.02, 0.10, 0.20, 0.50, 1.0];
    for (f, v) in fractions.iter().zip(wanda) {
        rows.push((method(base, Method::Wanda, *f), v));
    }
    for (f, v) in fractions.iter().zip(ours) {
        rows.push((method(base, Method::Contribution, *f), v));
    }
    let rows: Vec<_> = rows.into_iter().map(|(c, v)| (c.label(), c, v)).collect();
    per_iter_cells(&rows, "")
}

fn table3(base: &ExperimentConfig) -> Vec<Cell> {
    let grid: [(Activation, [[f64; 4]; 8]); 3] = [
        (
            Activation::LeakyRelu,
            [
                [93.19, 92.69, 88.09, 9.80],
                [97.15, 97.58, 97.89, 97.87],
                [96.77, 97.21, 97.78, 97.88],
                [96.68, 97.15, 97.72, 97.86],
                [96.63, 97.20, 97.79, 97.89],
                [97.03, 97.5, 97.81, 98.01],
                [97.97, 98.18, 98.12, 98.22],
                [98.01, 98.12, 98.21, 98.18],
            ],
        ),
        (
            Activation::Sigmoid,
            [
                [93.94, 83.55, 84.70, 9.80],
                [89.45, 92.28, 94.26, 96.09],
                [91.19, 94.66, 96.22, 96.91],
                [91.37, 94.44, 95.97, 96.89],
                [91.40, 94.42, 96.18, 96.83],
                [94.64, 95.44, 96.09, 96.62],
                [95.79, 96.47, 97.14, 97.56],
                [96.08, 96.66, 97.15, 97.70],
            ],
        ),
        (
            Activation::Tanh,
            [
                [93.36, 92.21, 39.73, 9.80],
                [92.74, 94.14, 95.66, 97.20],
                [93.11, 94.9, 96.47, 97.35],
                [93.3, 94.68, 96.39, 97.20],
                [93.21, 94.67, 96.33, 97.26],
                [96.17, 96.36, 96.86, 97.1],
                [97.09, 97.35, 97.51, 97.76],
                [97.08, 97.50, 97.54, 97.82],
            ],
        ),
    ];
    let methods = [
        (Method::Random, 1.0),
        (Method::Magnitude, 1.0),
        (Method::Wanda, 0.005),
        (Method::Wanda, 0.20),
        (Method::Wanda, 1.0),
        (Method::Contribution, 0.005),
        (Method::Contribution, 0.20),
        (Method::Contribution, 1.0),
    ];
    let mut cells = Vec::new();
    for (act, values) in grid {
        let act_base = ExperimentConfig { activation: act, ..base.clone() };
        let rows: Vec<_> = methods
            .iter()
            .zip(values)
            .map(|(&(m, f), v)| {
                let c = method(&act_base, m, f);
                (c.label(), c, v)
            })
            .collect();
        cells.extend(per_iter_cells(&rows, &format!("{act} ")));
    }
    cells
}

fn table4(base: &ExperimentConfig) -> Vec<Cell> {
    let rows = [
        (Method::Magnitude, [98.58, 98.11, 92.52]),
        (Method::Wanda, [98.60, 98.31, 90.32]),
        (Method::Contribution, [98.66, 98.44, 97.63]),
    ];
    let mut cells = Vec::new();
    for (m, values) in rows {
        for (target, published) in [0.10, 0.50, 0.75].into_iter().zip(values) {
            let config = ExperimentConfig { target, per_iter: 0.05, ..method(base, m, 1.0) };
            let row = match m {
                Method::Contribution => "Ours".to_string(),
                Method::Wanda => "Wanda".to_string(),
                _ => config.label(),
            };
            cells.push(Cell { row, column: format!("{}%", (target * 100.0).round()), config, published });
        }
    }
    cells
}

fn table5(base: &ExperimentConfig) -> Vec<Cell> {
    let lambda = if base.lambda_rl1 > 0.0 { base.lambda_rl1 } else { TABLE5_LAMBDA };
    let rows = [
        ((Method::Random, 1.0), [93.34, 92.92, 81.94, 84.71, 83.97, 68.75]),
        ((Method::Magnitude, 1.0), [96.43, 94.87, 93.54, 68.1, 74.05, 60.23]),
        ((Method::Wanda, 0.005), [97.16, 95.34, 96.02, 90.83, 91.07, 85.46]),
        ((Method::Wanda, 1.0), [97.21, 95.48, 96.07, 90.74, 91.07, 84.84]),
        ((Method::Contribution, 0.005), [97.80, 97.10, 97.39, 96.52, 95.02, 92.52]),
        ((Method::Contribution, 1.0), [97.87, 96.98, 97.51, 98.15, 94.79, 92.62]),
    ];
    let columns = [
        (0.50, Activation::Relu),
        (0.50, Activation::Tanh),
        (0.50, Activation::Sigmoid),
        (0.75, Activation::Relu),
        (0.75, Activation::Tanh),
        (0.75, Activation::Sigmoid),
    ];
    let mut cells = Vec::new();
    for ((m, f), values) in rows {
        for (&(target, act), published) in columns.iter().zip(values) {
            let config = ExperimentConfig { activation: act, target, per_iter: 0.25, lambda_rl1: lambda, ..method(base, m, f) };
            cells.push(Cell {
                row: config.label(),
                column: format!("{}% {act}", (target * 100.0).round()),
                config,
                published,
            });
        }
    }
    cells
}

/// Every cell of table `id`, derived from `base` (training settings, paths).
pub fn table_cells(id: u8, base: &ExperimentConfig) -> Result<Vec<Cell>> {
    Ok(match id {
        1 => table1(base),
        2 => table2(base),
        3 => table3(base),
        4 => table4(base),
        5 => table5(base),
        _ => return Err(HarnessError::Input(format!("unknown table {id}; expected 1-5"))),
    })
}

pub struct CellResult {
    pub cell: Cell,
    pub runs: Vec<ResultsRow>,
}

impl CellResult {
    /// Mean accuracy over seeds, in percent.
    pub fn mean(&self) -> f64 {
        if self.runs.is_empty() {
            return f64::NAN;
        }
        100.0 * self.runs.iter().map(|r| r.accuracy).sum::<f64>() / self.runs.len() as f64
    }
}

pub struct Reproduction {
    pub table: u8,
    pub cells: Vec<CellResult>,
}

#[derive(Serialize)]
struct SummaryRecord<'a> {
    row: &'a str,
    column: &'a str,
    published: f64,
    mean: f64,
    seeds: usize,
}

impl Reproduction {
    /// Pivot with one line per method and `mean (published)` per cell.
    pub fn markdown(&self) -> String {
        let mut rows: Vec<&str> = Vec::new();
        let mut cols: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !rows.contains(&c.cell.row.as_str()) {
                rows.push(&c.cell.row);
            }
            if !cols.contains(&c.cell.column.as_str()) {
                cols.push(&c.cell.column);
            }
        }
        let mut md = format!("Table {}: reproduced mean (published)\n\n| method |", self.table);
        for c in &cols {
            let _ = write!(md, " {c} |");
        }
        md.push_str("\n|---|");
        md.push_str(&"---|".repeat(cols.len()));
        md.push('\n');
        for r in &rows {
            let _ = write!(md, "| {r} |");
            for c in &cols {
                match self.cells.iter().find(|x| x.cell.row == *r && x.cell.column == *c) {
                    Some(x) => {
                        let _ = write!(md, " {:.2} ({:.2}) |", x.mean(), x.cell.published);
                    }
                    None => md.push_str(" |"),
                }
            }
            md.push('\n');
        }
        md
    }

    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for c in &self.cells {
            w.serialize(SummaryRecord { row: &c.cell.row, column: &c.cell.column, published: c.cell.published, mean: c.mean(), seeds: c.runs.len() })?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn runs_csv(&self) -> Result<String> {
        let rows: Vec<ResultsRow> = self.cells.iter().flat_map(|c| c.runs.iter().cloned()).collect();
        rows_to_csv(&rows)
    }
}

/// Runs every cell once per seed. `progress` receives one line per finished run.
pub fn reproduce_table(
    id: u8,
    seeds: &[u64],
    base: &ExperimentConfig,
    data: &Mnist,
    cache: &mut BaselineCache,
    mut progress: impl FnMut(&str),
) -> Result<Reproduction> {
    let cells = table_cells(id, base)?;
    let mut out = Vec::with_capacity(cells.len());
    for cell in cells {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = ExperimentConfig { seed, ..cell.config.clone() };
            let outcome = run_experiment(&cfg, data, cache)?;
            progress(&format!(
                "table {id} | {} | {} | seed {seed} | {:.2}% ({:.1}s)",
                cell.row,
                cell.column,
                outcome.row.accuracy * 100.0,
                outcome.seconds
            ));
            runs.push(outcome.row);
        }
        out.push(CellResult { cell, runs });
    }
    Ok(Reproduction { table: id, cells: out })
}
