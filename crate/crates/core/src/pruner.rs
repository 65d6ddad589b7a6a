//! Iterative prune / fine-tune loop.

use std::io::{self, Write};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{sample_subset, MnistSplit, SubsetSpec};
use crate::error::{Error, Result};
use crate::network::{fine_tune, forward, FineTuneConfig, MlpModel, PruneMask};
use crate::scoring::{ScoreTensor, ScorerKind};

const EVAL_BATCH: usize = 1000;

/// Target sparsity `P_t` reached in steps of `P_i`, both fractions of the
/// original weight count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PruneSchedule {
    target: f64,
    per_iter: f64,
}

impl PruneSchedule {
    pub fn new(target: f64, per_iter: f64) -> Result<Self> {
        if !(target > 0.0 && target < 1.0) {
            return Err(Error::input(format!("target ratio must be in (0, 1), got {target}")));
        }
        if !(per_iter > 0.0 && per_iter <= 1.0) {
            return Err(Error::input(format!("per-iteration ratio must be in (0, 1], got {per_iter}")));
        }
        Ok(PruneSchedule { target, per_iter })
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn per_iter(&self) -> f64 {
        self.per_iter
    }

    pub fn iterations(&self) -> usize {
        ((self.target / self.per_iter) - 1e-9).ceil().max(1.0) as usize
    }

    /// Weights pruned in total once iteration `t` (1-based) has finished.
    pub fn cumulative_count(&self, t: usize, total: usize) -> usize {
        let final_count = (self.target * total as f64).round() as usize;
        if t >= self.iterations() {
            return final_count;
        }
        let step = (t as f64 * self.per_iter * total as f64).round() as usize;
        step.min(final_count)
    }
}

/// The `k` active weights with the smallest scores, ties broken by
/// (layer, row, col). Returned in ascending score order.
pub fn select_prune_set(scores: &ScoreTensor, mask: &PruneMask, k: usize) -> Result<Vec<(usize, usize, usize)>> {
    if !scores.is_congruent(mask) {
        return Err(Error::shape("select_prune_set", "score tensor and mask differ in shape"));
    }
    let active = mask.active_count();
    if k > active {
        return Err(Error::input(format!("cannot prune {k} weights, only {active} active")));
    }
    let mut candidates: Vec<(f64, usize, usize, usize)> = Vec::with_capacity(active);
    for (l, (s, m)) in scores.layers.iter().zip(mask.layers()).enumerate() {
        for (idx, (&v, &on)) in s.values.iter().zip(m.bits()).enumerate() {
            if on {
                candidates.push((v, l, idx / s.cols, idx % s.cols));
            }
        }
    }
    let order = |a: &(f64, usize, usize, usize), b: &(f64, usize, usize, usize)| {
        a.0.total_cmp(&b.0).then((a.1, a.2, a.3).cmp(&(b.1, b.2, b.3)))
    };
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k, order);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(order);
    Ok(candidates.into_iter().map(|(_, l, r, c)| (l, r, c)).collect())
}

/// Argmax class per row, lowest index on ties.
pub fn predict(model: &MlpModel, mask: &PruneMask, images: &crate::numerics::DenseMatrix) -> Result<Vec<usize>> {
    let (logits, _) = forward(model, mask, images)?;
    Ok((0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

pub fn evaluate(model: &MlpModel, mask: &PruneMask, test: &MnistSplit) -> Result<f64> {
    if test.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    let all: Vec<usize> = (0..test.len()).collect();
    for block in all.chunks(EVAL_BATCH) {
        let part = test.select(block);
        let pred = predict(model, mask, &part.images)?;
        correct += pred.iter().zip(&part.labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / test.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub pruned: usize,
    pub sparsity: f64,
    pub accuracy: f64,
    pub seconds: f64,
}

/// One row per iteration; row 0 is the model before any pruning.
#[derive(Clone, Debug, PartialEq)]
pub struct PruneReport {
    pub method: String,
    pub data_fraction: f64,
    pub per_iter_ratio: f64,
    pub seed: u64,
    pub records: Vec<IterationRecord>,
}

impl PruneReport {
    pub fn final_accuracy(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.accuracy)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "iteration,sparsity,accuracy,method,data_fraction,per_iter_ratio,seed,seconds")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{:.3}",
                r.iteration, r.sparsity, r.accuracy, self.method, self.data_fraction, self.per_iter_ratio, self.seed, r.seconds
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PruneConfig {
    pub schedule: PruneSchedule,
    pub scorer: ScorerKind,
    pub fine_tune: FineTuneConfig,
    pub seed: u64,
    /// Draw a fresh scoring subset every iteration instead of once per run.
    pub resample_subset: bool,
}

pub struct PruneOutcome {
    pub model: MlpModel,
    pub mask: PruneMask,
    pub report: PruneReport,
}

/// Scores, prunes the next slice of the schedule and fine-tunes, until the
/// target count is reached. The scoring subset is drawn from `train` once per
/// run unless `resample_subset` is set; evaluation always uses all of `test`.
pub fn prune_iteratively(mut model: MlpModel, train: &MnistSplit, test: &MnistSplit, cfg: &PruneConfig) -> Result<PruneOutcome> {
    let mut mask = PruneMask::all_active(&model);
    let total = mask.total();
    let draw = |t: u64| -> Result<Option<MnistSplit>> {
        match cfg.scorer.subset() {
            Some(spec) => Ok(Some(sample_subset(train, &SubsetSpec { seed: spec.seed.wrapping_add(t), ..spec })?)),
            None => Ok(None),
        }
    };
    let mut scoring = draw(0)?;
    let mut seeder = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = vec![IterationRecord {
        iteration: 0,
        pruned: 0,
        sparsity: 0.0,
        accuracy: evaluate(&model, &mask, test)?,
        seconds: 0.0,
    }];
    for t in 1..=cfg.schedule.iterations() {
        let started = Instant::now();
        let want = cfg.schedule.cumulative_count(t, total);
        let k = want.saturating_sub(mask.pruned_count());
        let tune_seed = seeder.next_u64();
        if k > 0 {
            if cfg.resample_subset && t > 1 {
                scoring = draw(t as u64 - 1)?;
            }
            let images = scoring.as_ref().map_or(&train.images, |s| &s.images);
            let scores = cfg.scorer.score(&model, &mask, images)?;
            for (l, r, c) in select_prune_set(&scores, &mask, k)? {
                mask.prune(l, r, c);
            }
            mask.apply(&mut model);
        }
        fine_tune(&mut model, &mask, train, &cfg.fine_tune, tune_seed)?;
        records.push(IterationRecord {
            iteration: t,
            pruned: mask.pruned_count(),
            sparsity: mask.sparsity(),
            accuracy: evaluate(&model, &mask, test)?,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    let report = PruneReport {
        method: cfg.scorer.method().to_string(),
        data_fraction: cfg.scorer.subset().map_or(1.0, |s| s.fraction),
        per_iter_ratio: cfg.schedule.per_iter(),
        seed: cfg.seed,
        records,
    };
    Ok(PruneOutcome { model, mask, report })
}
