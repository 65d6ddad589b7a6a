//! Per-weight importance scores.
//!
//! The contribution of weight `(i, j)` on one sample is the relative change of
//! node `j`'s activation when that single weight is removed:
//! `|a_j - ā_j| / (|a_j| + 1e-8)` with `ā_j = φ(z_j - x_i w_ij)`. Its mean and
//! standard deviation over the scoring samples feed the importance
//! `s_l (α·mean + β / (ε + std))`. Magnitude, Wanda and random scores are the
//! baselines.

use std::fmt;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::SubsetSpec;
use crate::error::{Error, Result};
use crate::network::{forward_with, masked_weights, preactivation, MlpModel, PruneMask};
use crate::numerics::{ActivationKind, DenseMatrix};
use crate::stats::{RunningStats, ZeroSkippingWelford};

/// Default guard keeping the contribution ratio bounded when `a_j` is 0.
pub const CONTRIBUTION_EPS: f64 = 1e-8;

const SCORING_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerStats {
    pub rows: usize,
    pub cols: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LayerStats {
    pub fn mean_at(&self, r: usize, c: usize) -> f64 {
        self.mean[r * self.cols + c]
    }

    pub fn std_at(&self, r: usize, c: usize) -> f64 {
        self.std[r * self.cols + c]
    }
}

/// Mean and population std of every weight's contribution over `count` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ContributionStats {
    pub layers: Vec<LayerStats>,
    pub count: u64,
}

impl ContributionStats {
    /// CSV with columns `layer,row,col,mean,std,count`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "layer,row,col,mean,std,count")?;
        for (l, layer) in self.layers.iter().enumerate() {
            for r in 0..layer.rows {
                for c in 0..layer.cols {
                    writeln!(out, "{l},{r},{c},{},{},{}", layer.mean_at(r, c), layer.std_at(r, c), self.count)?;
                }
            }
        }
        Ok(())
    }
}

fn check_inputs(model: &MlpModel, mask: &PruneMask, data: &DenseMatrix, op: &'static str) -> Result<()> {
    mask.check_congruent(model)?;
    if data.rows() == 0 {
        return Err(Error::input(format!("{op}: no samples to score")));
    }
    if data.cols() != model.input_dim() {
        return Err(Error::shape(op, format!("data has {} features, model expects {}", data.cols(), model.input_dim())));
    }
    Ok(())
}

/// Streams one layer's contributions for a block of samples into `acc`.
///
/// `first_sample` is the stream index of row 0 of the block.
#[allow(clippy::too_many_arguments)]
fn accumulate_layer<F: Fn(f64) -> f64>(
    phi: F,
    x: &[f64],
    z: &[f64],
    wm: &[f64],
    rows: usize,
    in_dim: usize,
    out_dim: usize,
    first_sample: u64,
    eps_div: f64,
    acc: &mut ZeroSkippingWelford,
) {
    let a: Vec<f64> = z.iter().map(|&v| phi(v)).collect();
    let inv_den: Vec<f64> = a.iter().map(|&v| 1.0 / (v.abs() + eps_div)).collect();
    for i in 0..in_dim {
        let w_row = &wm[i * out_dim..(i + 1) * out_dim];
        for s in 0..rows {
            let xi = x[s * in_dim + i];
            if xi == 0.0 {
                continue;
            }
            let sample = first_sample + s as u64;
            let base = s * out_dim;
            for (j, &w) in w_row.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let a_full = a[base + j];
                let a_without = phi(z[base + j] - xi * w);
                let c = (a_full - a_without).abs() * inv_den[base + j];
                if c != 0.0 {
                    acc.push(i * out_dim + j, sample, c);
                }
            }
        }
    }
}

/// Contribution statistics for every weight, computed a whole input row of
/// weights at a time from one shared forward pass per batch.
pub fn contribution_stats(model: &MlpModel, mask: &PruneMask, data: &DenseMatrix) -> Result<ContributionStats> {
    contribution_stats_with_eps(model, mask, data, CONTRIBUTION_EPS)
}

/// [`contribution_stats`] with an explicit denominator guard.
pub fn contribution_stats_with_eps(model: &MlpModel, mask: &PruneMask, data: &DenseMatrix, eps_div: f64) -> Result<ContributionStats> {
    check_inputs(model, mask, data, "contribution_stats")?;
    check_eps(eps_div)?;
    let wm = masked_weights(model, mask);
    let mut acc: Vec<ZeroSkippingWelford> = model.layers().iter().map(|l| ZeroSkippingWelford::new(l.weights.len())).collect();
    let order: Vec<usize> = (0..data.rows()).collect();
    let mut first = 0u64;
    for block in order.chunks(SCORING_BATCH) {
        let batch = data.select_rows(block);
        let rows = block.len();
        let trace = forward_with(model, &wm, &batch);
        for (l, layer) in model.layers().iter().enumerate() {
            let x = trace.layer_input(l).to_f64();
            let z = preactivation(layer, &wm[l], &x, rows);
            let (k, n) = (layer.spec.in_dim, layer.spec.out_dim);
            let acc = &mut acc[l];
            match layer.spec.activation {
                ActivationKind::Identity => accumulate_layer(|v| v, &x, &z, &wm[l], rows, k, n, first, eps_div, acc),
                ActivationKind::Relu => accumulate_layer(|v: f64| v.max(0.0), &x, &z, &wm[l], rows, k, n, first, eps_div, acc),
                kind => accumulate_layer(|v| kind.apply(v), &x, &z, &wm[l], rows, k, n, first, eps_div, acc),
            }
        }
        first += rows as u64;
    }
    let layers = model
        .layers()
        .iter()
        .zip(acc)
        .map(|(layer, acc)| {
            let (mean, std) = acc.finish(first);
            LayerStats { rows: layer.spec.in_dim, cols: layer.spec.out_dim, mean, std }
        })
        .collect();
    Ok(ContributionStats { layers, count: first })
}

/// One-weight-at-a-time reference for [`contribution_stats`]. Cost grows with
/// `in_dim² · out_dim · samples` per layer; meant for toy models.
pub fn contribution_stats_naive(model: &MlpModel, mask: &PruneMask, data: &DenseMatrix) -> Result<ContributionStats> {
    contribution_stats_naive_with_eps(model, mask, data, CONTRIBUTION_EPS)
}

pub fn contribution_stats_naive_with_eps(model: &MlpModel, mask: &PruneMask, data: &DenseMatrix, eps_div: f64) -> Result<ContributionStats> {
    check_inputs(model, mask, data, "contribution_stats_naive")?;
    check_eps(eps_div)?;
    let wm = masked_weights(model, mask);
    let trace = forward_with(model, &wm, data);
    let samples = data.rows();
    let mut layers = Vec::with_capacity(model.layers().len());
    for (l, layer) in model.layers().iter().enumerate() {
        let (k, n) = (layer.spec.in_dim, layer.spec.out_dim);
        let act = layer.spec.activation;
        let x = trace.layer_input(l);
        let node = |weights: &[f64], s: usize, j: usize| -> f64 {
            let mut z = layer.bias[j] as f64;
            for i in 0..k {
                z += x.get(s, i) as f64 * weights[i * n + j];
            }
            act.apply(z)
        };
        let mut mean = vec![0.0; k * n];
        let mut std = vec![0.0; k * n];
        let mut ablated = wm[l].clone();
        for i in 0..k {
            for j in 0..n {
                let mut stats = RunningStats::new();
                if !mask.is_active(l, i, j) {
                    (0..samples).for_each(|_| stats.push(0.0));
                } else {
                    ablated[i * n + j] = 0.0;
                    for s in 0..samples {
                        let a = node(&wm[l], s, j);
                        let a_bar = node(&ablated, s, j);
                        stats.push((a - a_bar).abs() / (a.abs() + eps_div));
                    }
                    ablated[i * n + j] = wm[l][i * n + j];
                }
                mean[i * n + j] = stats.mean();
                std[i * n + j] = stats.std();
            }
        }
        layers.push(LayerStats { rows: k, cols: n, mean, std });
    }
    Ok(ContributionStats { layers, count: samples as u64 })
}

fn check_eps(eps_div: f64) -> Result<()> {
    if eps_div > 0.0 && eps_div.is_finite() {
        Ok(())
    } else {
        Err(Error::input(format!("contribution eps must be > 0, got {eps_div}")))
    }
}

/// Which end of the network gets exponent 0 in the per-layer factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerOrder {
    FromInput,
    FromOutput,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImportanceConfig {
    pub alpha: f64,
    pub beta: f64,
    pub eps: f64,
    pub layer_factor: bool,
    pub layer_factor_base: f64,
    pub layer_order: LayerOrder,
    /// Denominator guard of the per-sample contribution, not part of the score formula.
    pub contribution_eps: f64,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        ImportanceConfig {
            alpha: 1.0,
            beta: 1e-7,
            eps: 1e-12,
            layer_factor: true,
            layer_factor_base: 2.0,
            layer_order: LayerOrder::FromInput,
            contribution_eps: CONTRIBUTION_EPS,
        }
    }
}

impl ImportanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::input(format!("importance eps must be > 0, got {}", self.eps)));
        }
        if !(self.alpha.is_finite() && self.beta.is_finite() && self.layer_factor_base.is_finite()) {
            return Err(Error::input("importance parameters must be finite"));
        }
        Ok(())
    }

    pub fn layer_scale(&self, layer: usize, n_layers: usize) -> f64 {
        if !self.layer_factor {
            return 1.0;
        }
        let exponent = match self.layer_order {
            LayerOrder::FromInput => layer,
            LayerOrder::FromOutput => n_layers - 1 - layer,
        };
        self.layer_factor_base.powi(exponent as i32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }
}

/// Per-weight scores, higher = more important. Pruned positions hold
/// `-inf` once [`ScoreTensor::exclude_pruned`] has run.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTensor {
    pub layers: Vec<ScoreMatrix>,
}

impl ScoreTensor {
    pub fn exclude_pruned(mut self, mask: &PruneMask) -> Self {
        for (scores, m) in self.layers.iter_mut().zip(mask.layers()) {
            for (v, &on) in scores.values.iter_mut().zip(m.bits()) {
                if !on {
                    *v = f64::NEG_INFINITY;
                }
            }
        }
        self
    }

    pub fn is_congruent(&self, mask: &PruneMask) -> bool {
        self.layers.len() == mask.layers().len()
            && self.layers.iter().zip(mask.layers()).all(|(s, m)| (s.rows, s.cols) == m.shape())
    }
}

pub fn importance(stats: &ContributionStats, cfg: &ImportanceConfig) -> Result<ScoreTensor> {
    cfg.validate()?;
    let n_layers = stats.layers.len();
    let layers = stats
        .layers
        .iter()
        .enumerate()
        .map(|(l, ls)| {
            let s = cfg.layer_scale(l, n_layers);
            let values = ls
                .mean
                .iter()
                .zip(&ls.std)
                .map(|(&mean, &std)| s * (cfg.alpha * mean + cfg.beta / (cfg.eps + std)))
                .collect();
            ScoreMatrix { rows: ls.rows, cols: ls.cols, values }
        })
        .collect();
    Ok(ScoreTensor { layers })
}

pub fn magnitude_scores(model: &MlpModel, mask: &PruneMask) -> Result<ScoreTensor> {
    mask.check_congruent(model)?;
    let layers = model
        .layers()
        .iter()
        .map(|l| ScoreMatrix {
            rows: l.spec.in_dim,
            cols: l.spec.out_dim,
            values: l.weights.as_slice().iter().map(|w| (*w as f64).abs()).collect(),
        })
        .collect();
    Ok(ScoreTensor { layers }.exclude_pruned(mask))
}

/// Euclidean norm over samples of every layer's input features, under the mask.
pub fn input_feature_norms(model: &MlpModel, mask: &PruneMask, data: &DenseMatrix) -> Result<Vec<Vec<f64>>> {
    check_inputs(model, mask, data, "input_feature_norms")?;
    let wm = masked_weights(model, mask);
    let mut sums: Vec<Vec<f64>> = model.layers().iter().map(|l| vec![0.0; l.spec.in_dim]).collect();
    let order: Vec<usize> = (0..data.rows()).collect();
    for block in order.chunks(SCORING_BATCH) {
        let trace = forward_with(model, &wm, &data.select_rows(block));
        for (l, acc) in sums.iter_mut().enumerate() {
            let x = trace.layer_input(l);
            for r in 0..x.rows() {
                for (a, &v) in acc.iter_mut().zip(x.row(r)) {
                    *a += v as f64 * v as f64;
                }
            }
        }
    }
    Ok(sums.into_iter().map(|v| v.into_iter().map(f64::sqrt).collect()).collect())
}

/// Wanda: `|w_ij| · ‖X_{:,i}‖₂` with `X` the layer's inputs over `data`.
pub fn wanda_scores(model: &MlpModel, mask: &PruneMask, data: &DenseMatrix) -> Result<ScoreTensor> {
    let norms = input_feature_norms(model, mask, data)?;
    let layers = model
        .layers()
        .iter()
        .zip(&norms)
        .map(|(l, norm)| {
            let n = l.spec.out_dim;
            let values = l
                .weights
                .as_slice()
                .iter()
                .enumerate()
                .map(|(idx, w)| (*w as f64).abs() * norm[idx / n])
                .collect();
            ScoreMatrix { rows: l.spec.in_dim, cols: n, values }
        })
        .collect();
    Ok(ScoreTensor { layers }.exclude_pruned(mask))
}

/// Independent `U[0, 1)` per weight, drawn in (layer, row, col) order.
pub fn random_scores(model: &MlpModel, mask: &PruneMask, seed: u64) -> Result<ScoreTensor> {
    mask.check_congruent(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = model
        .layers()
        .iter()
        .map(|l| ScoreMatrix {
            rows: l.spec.in_dim,
            cols: l.spec.out_dim,
            values: (0..l.weights.len()).map(|_| rng.random::<f64>()).collect(),
        })
        .collect();
    Ok(ScoreTensor { layers }.exclude_pruned(mask))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScorerKind {
    Contribution { importance: ImportanceConfig, subset: SubsetSpec },
    Magnitude,
    Wanda { subset: SubsetSpec },
    Random { seed: u64 },
}

impl ScorerKind {
    /// Scoring subset for data-driven scorers.
    pub fn subset(&self) -> Option<SubsetSpec> {
        match self {
            ScorerKind::Contribution { subset, .. } | ScorerKind::Wanda { subset } => Some(*subset),
            ScorerKind::Magnitude | ScorerKind::Random { .. } => None,
        }
    }

    pub fn method(&self) -> &'static str {
        match self {
            ScorerKind::Contribution { .. } => "contribution",
            ScorerKind::Magnitude => "magnitude",
            ScorerKind::Wanda { .. } => "wanda",
            ScorerKind::Random { .. } => "random",
        }
    }

    /// Scores every weight; `data` is the scoring subset and is ignored by
    /// data-free scorers. Pruned weights always score `-inf`.
    pub fn score(&self, model: &MlpModel, mask: &PruneMask, data: &DenseMatrix) -> Result<ScoreTensor> {
        match self {
            ScorerKind::Contribution { importance: cfg, .. } => {
                let stats = contribution_stats_with_eps(model, mask, data, cfg.contribution_eps)?;
                Ok(importance(&stats, cfg)?.exclude_pruned(mask))
            }
            ScorerKind::Magnitude => magnitude_scores(model, mask),
            ScorerKind::Wanda { .. } => wanda_scores(model, mask, data),
            ScorerKind::Random { seed } => random_scores(model, mask, *seed),
        }
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |s: &SubsetSpec| format!("{}%", s.fraction * 100.0);
        match self {
            ScorerKind::Contribution { importance, subset } => write!(
                f,
                "Ours ({}; a={}, b={}, s={})",
                pct(subset),
                importance.alpha,
                importance.beta,
                if importance.layer_factor { "on" } else { "off" }
            ),
            ScorerKind::Magnitude => f.write_str("Magnitude"),
            ScorerKind::Wanda { subset } => write!(f, "Wanda ({})", pct(subset)),
            ScorerKind::Random { seed } => write!(f, "Random (seed {seed})"),
        }
    }
}
