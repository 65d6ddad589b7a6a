//! Histogram entropy, activation / weight-presence mutual information and
//! blind-range occupancy. All entropies are in nats.

use crate::error::{Error, Result};
use crate::network::{forward, forward_with, masked_weights, preactivation, MlpModel, PruneMask};
use crate::numerics::DenseMatrix;
use crate::scoring::ScoreMatrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistogramEstimator {
    bins: usize,
    range: Option<(f64, f64)>,
}

impl Default for HistogramEstimator {
    fn default() -> Self {
        HistogramEstimator { bins: 64, range: None }
    }
}

impl HistogramEstimator {
    pub fn new(bins: usize, range: Option<(f64, f64)>) -> Result<Self> {
        if bins < 2 {
            return Err(Error::input(format!("histogram needs at least 2 bins, got {bins}")));
        }
        if let Some((lo, hi)) = range {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::input(format!("histogram range must satisfy lo < hi, got ({lo}, {hi})")));
            }
        }
        Ok(HistogramEstimator { bins, range })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Explicit range, or min/max of `samples`. `None` when the auto range is a point.
    fn resolve(&self, samples: &[f64]) -> Option<(f64, f64)> {
        if let Some(r) = self.range {
            return Some(r);
        }
        let (lo, hi) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        (lo < hi).then_some((lo, hi))
    }
}

/// `-Σ p ln(p / Δ)` over a fixed binning. Samples outside the range land in
/// the edge bins.
fn binned_entropy(samples: &[f64], bins: usize, lo: f64, hi: f64) -> f64 {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &x in samples {
        let b = ((x - lo) / width).floor();
        let b = if b.is_nan() || b < 0.0 { 0 } else { (b as usize).min(bins - 1) };
        counts[b] += 1;
    }
    let n = samples.len() as f64;
    let mut h = 0.0;
    for &c in &counts {
        if c > 0 {
            let p = c as f64 / n;
            h -= p * p.ln();
        }
    }
    h + width.ln()
}

/// Differential entropy estimate. Returns `-inf` when the samples are all
/// equal and the range is automatic.
pub fn histogram_entropy(samples: &[f64], est: &HistogramEstimator) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::input(format!("entropy needs at least 2 samples, got {}", samples.len())));
    }
    Ok(match est.resolve(samples) {
        Some((lo, hi)) => binned_entropy(samples, est.bins, lo, hi),
        None => f64::NEG_INFINITY,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MiEstimate {
    /// `max(raw, 0)`.
    pub value: f64,
    /// `h_marginal - h_conditional` before clamping.
    pub raw: f64,
    pub h_marginal: f64,
    pub h_conditional: f64,
    /// Samples per condition.
    pub sample_count: usize,
    pub degenerate: bool,
}

/// MI between a node's activation and a binary present/absent event with
/// equal prior, both conditionals binned on the pooled range.
pub fn mi_from_conditionals(present: &[f64], absent: &[f64], est: &HistogramEstimator) -> Result<MiEstimate> {
    if present.len() < 2 || absent.len() < 2 {
        return Err(Error::input("mutual information needs at least 2 samples per condition"));
    }
    let pooled: Vec<f64> = present.iter().chain(absent).copied().collect();
    let Some((lo, hi)) = est.resolve(&pooled) else {
        return Ok(MiEstimate {
            value: 0.0,
            raw: 0.0,
            h_marginal: f64::NEG_INFINITY,
            h_conditional: f64::NEG_INFINITY,
            sample_count: present.len(),
            degenerate: true,
        });
    };
    let h_marginal = binned_entropy(&pooled, est.bins, lo, hi);
    let h_conditional = 0.5 * (binned_entropy(present, est.bins, lo, hi) + binned_entropy(absent, est.bins, lo, hi));
    let raw = h_marginal - h_conditional;
    Ok(MiEstimate { value: raw.max(0.0), raw, h_marginal, h_conditional, sample_count: present.len(), degenerate: false })
}

fn check_weight(model: &MlpModel, mask: &PruneMask, layer: usize, i: usize, j: usize) -> Result<()> {
    mask.check_congruent(model)?;
    let spec = model
        .layers()
        .get(layer)
        .ok_or_else(|| Error::input(format!("layer {layer} out of range")))?
        .spec;
    if i >= spec.in_dim || j >= spec.out_dim {
        return Err(Error::input(format!("weight ({i}, {j}) outside layer {layer} of shape {}x{}", spec.in_dim, spec.out_dim)));
    }
    Ok(())
}

/// Layer inputs and masked pre-activations of `layer` over `data`.
fn layer_signals(model: &MlpModel, mask: &PruneMask, data: &DenseMatrix, layer: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if data.cols() != model.input_dim() {
        return Err(Error::shape("infometrics", format!("data has {} features, model expects {}", data.cols(), model.input_dim())));
    }
    let wm = masked_weights(model, mask);
    let trace = forward_with(model, &wm, data);
    let x = trace.layer_input(layer).to_f64();
    let z = preactivation(&model.layers()[layer], &wm[layer], &x, data.rows());
    Ok((x, z))
}

fn conditionals(model: &MlpModel, x: &[f64], z: &[f64], layer: usize, i: usize, j: usize, w: f64) -> (Vec<f64>, Vec<f64>) {
    let spec = model.layers()[layer].spec;
    let (k, n) = (spec.in_dim, spec.out_dim);
    let rows = x.len() / k;
    let present = (0..rows).map(|s| spec.activation.apply(z[s * n + j])).collect();
    let absent = (0..rows).map(|s| spec.activation.apply(z[s * n + j] - x[s * k + i] * w)).collect();
    (present, absent)
}

fn zero_estimate(samples: usize) -> MiEstimate {
    MiEstimate { value: 0.0, raw: 0.0, h_marginal: 0.0, h_conditional: 0.0, sample_count: samples, degenerate: false }
}

/// Requires the weight to be active. A weight whose value is 0 gives exactly 0.
pub fn mi_weight_presence(
    model: &MlpModel,
    mask: &PruneMask,
    data: &DenseMatrix,
    layer: usize,
    i: usize,
    j: usize,
    est: &HistogramEstimator,
) -> Result<MiEstimate> {
    check_weight(model, mask, layer, i, j)?;
    if !mask.is_active(layer, i, j) {
        return Err(Error::input(format!("weight ({layer}, {i}, {j}) is pruned")));
    }
    let w = model.layers()[layer].weights.get(i, j) as f64;
    if w == 0.0 {
        return Ok(zero_estimate(data.rows()));
    }
    let (x, z) = layer_signals(model, mask, data, layer)?;
    let (present, absent) = conditionals(model, &x, &z, layer, i, j, w);
    mi_from_conditionals(&present, &absent, est)
}

/// Estimates for every active weight of `layer` with input row below
/// `max_row`, over the first `sample_cap` rows of `data`, sharing one forward
/// pass. Zero weights give exactly 0. Cost is one histogram pass per weight.
pub fn mi_layer_estimates(
    model: &MlpModel,
    mask: &PruneMask,
    data: &DenseMatrix,
    layer: usize,
    est: &HistogramEstimator,
    sample_cap: usize,
    max_row: usize,
) -> Result<Vec<(usize, usize, MiEstimate)>> {
    check_weight(model, mask, layer, 0, 0)?;
    let rows: Vec<usize> = (0..data.rows().min(sample_cap)).collect();
    let data = data.select_rows(&rows);
    let (x, z) = layer_signals(model, mask, &data, layer)?;
    let l = &model.layers()[layer];
    let mut out = Vec::new();
    for i in 0..l.spec.in_dim.min(max_row) {
        for j in 0..l.spec.out_dim {
            if !mask.is_active(layer, i, j) {
                continue;
            }
            let w = l.weights.get(i, j) as f64;
            let mi = if w == 0.0 {
                zero_estimate(rows.len())
            } else {
                let (present, absent) = conditionals(model, &x, &z, layer, i, j, w);
                mi_from_conditionals(&present, &absent, est)?
            };
            out.push((i, j, mi));
        }
    }
    Ok(out)
}

/// MI matrix for `layer`; pruned weights score 0.
pub fn mi_rank_layer(
    model: &MlpModel,
    mask: &PruneMask,
    data: &DenseMatrix,
    layer: usize,
    est: &HistogramEstimator,
    sample_cap: usize,
) -> Result<ScoreMatrix> {
    let estimates = mi_layer_estimates(model, mask, data, layer, est, sample_cap, usize::MAX)?;
    let spec = model.layers()[layer].spec;
    let mut values = vec![0.0; spec.in_dim * spec.out_dim];
    for (i, j, mi) in estimates {
        values[i * spec.out_dim + j] = mi.value;
    }
    Ok(ScoreMatrix { rows: spec.in_dim, cols: spec.out_dim, values })
}

/// Per hidden layer, fraction of (sample, node) pre-activations with `|φ'(z)| ≤ tol`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlindRangeOccupancy {
    pub layers: Vec<f64>,
}

impl BlindRangeOccupancy {
    pub fn mean(&self) -> f64 {
        if self.layers.is_empty() {
            0.0
        } else {
            self.layers.iter().sum::<f64>() / self.layers.len() as f64
        }
    }
}

pub fn blind_range_occupancy(model: &MlpModel, mask: &PruneMask, data: &DenseMatrix, tol: f64) -> Result<BlindRangeOccupancy> {
    if !(tol >= 0.0) {
        return Err(Error::input(format!("occupancy tolerance must be >= 0, got {tol}")));
    }
    let (_, trace) = forward(model, mask, data)?;
    let hidden = model.layers().len() - 1;
    let layers = (0..hidden)
        .map(|l| {
            let act = model.layers()[l].spec.activation;
            let pre = &trace.pre[l];
            if pre.is_empty() {
                return 0.0;
            }
            let hits = pre.as_slice().iter().filter(|&&z| act.derivative(z as f64).abs() <= tol).count();
            hits as f64 / pre.len() as f64
        })
        .collect();
    Ok(BlindRangeOccupancy { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Layer, LayerSpec};
    use crate::numerics::ActivationKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn gaussian_entropy() -> f64 {
        0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()
    }

    #[test]
    fn uniform_entropies() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let est = HistogramEstimator::default();
        assert!(histogram_entropy(&u, &est).unwrap().abs() < 0.05);
        let u2: Vec<f64> = u.iter().map(|x| 2.0 * x).collect();
        assert!((histogram_entropy(&u2, &est).unwrap() - 2f64.ln()).abs() < 0.05);
    }

    #[test]
    fn gaussian_entropy_oracle() {
        let h = histogram_entropy(&normals(100_000, 2), &HistogramEstimator::default()).unwrap();
        assert!((h - gaussian_entropy()).abs() < 0.05, "{h}");
    }

    #[test]
    fn gaussian_estimate_improves_with_samples() {
        let est = HistogramEstimator::default();
        let err = |n: usize| -> f64 {
            (0..5).map(|seed| (histogram_entropy(&normals(n, seed), &est).unwrap() - gaussian_entropy()).abs()).sum::<f64>() / 5.0
        };
        assert!(err(4_000) < err(1_000));
    }

    #[test]
    fn entropy_edge_cases() {
        let est = HistogramEstimator::default();
        assert!(matches!(histogram_entropy(&[1.0], &est), Err(Error::Input(_))));
        assert_eq!(histogram_entropy(&[3.0; 10], &est).unwrap(), f64::NEG_INFINITY);
        let fixed = HistogramEstimator::new(4, Some((0.0, 4.0))).unwrap();
        // point mass in one bin of width 1
        assert_eq!(histogram_entropy(&[3.0; 10], &fixed).unwrap(), 0.0);
        // out-of-range samples are clamped into the edge bins
        let h = histogram_entropy(&[-10.0, 10.0], &fixed).unwrap();
        assert!((h - 2f64.ln()).abs() < 1e-12);
        assert!(HistogramEstimator::new(1, None).is_err());
        assert!(HistogramEstimator::new(8, Some((1.0, 1.0))).is_err());
    }

    #[test]
    fn entropy_is_permutation_invariant() {
        let mut v = normals(5_000, 3);
        let est = HistogramEstimator::default();
        let before = histogram_entropy(&v, &est).unwrap();
        v.reverse();
        v.rotate_left(1234);
        assert_eq!(histogram_entropy(&v, &est).unwrap(), before);
    }

    fn identity_unit(w: f32) -> MlpModel {
        MlpModel::new(vec![Layer {
            spec: LayerSpec::new(1, 1, ActivationKind::Identity).unwrap(),
            weights: DenseMatrix::from_vec(1, 1, vec![w]).unwrap(),
            bias: vec![0.0],
        }])
        .unwrap()
    }

    fn uniform_column(n: usize) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        DenseMatrix::from_fn(n, 1, |_, _| rng.random())
    }

    #[test]
    fn mixture_mi_approaches_ln2() {
        let model = identity_unit(1.0);
        let mask = PruneMask::all_active(&model);
        let mi = mi_weight_presence(&model, &mask, &uniform_column(20_000), 0, 0, 0, &HistogramEstimator::default()).unwrap();
        assert!((mi.value - 2f64.ln()).abs() < 0.1, "{mi:?}");
        assert!((mi.value - (mi.h_marginal - mi.h_conditional)).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_has_exactly_zero_mi() {
        let model = identity_unit(0.0);
        let mask = PruneMask::all_active(&model);
        let mi = mi_weight_presence(&model, &mask, &uniform_column(100), 0, 0, 0, &HistogramEstimator::default()).unwrap();
        assert_eq!(mi.value, 0.0);
    }

    #[test]
    fn blind_node_has_zero_mi() {
        let model = MlpModel::new(vec![Layer {
            spec: LayerSpec::new(1, 1, ActivationKind::Relu).unwrap(),
            weights: DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap(),
            bias: vec![-5.0],
        }])
        .unwrap();
        let mi = mi_weight_presence(&model, &PruneMask::all_active(&model), &uniform_column(1000), 0, 0, 0, &HistogramEstimator::default())
            .unwrap();
        assert_eq!(mi.value, 0.0);
        assert!(mi.degenerate);
    }

    #[test]
    fn pruned_or_out_of_range_weight_rejected() {
        let model = identity_unit(1.0);
        let mut mask = PruneMask::all_active(&model);
        let data = uniform_column(10);
        let est = HistogramEstimator::default();
        assert!(mi_weight_presence(&model, &mask, &data, 1, 0, 0, &est).is_err());
        assert!(mi_weight_presence(&model, &mask, &data, 0, 1, 0, &est).is_err());
        mask.prune(0, 0, 0);
        assert!(mi_weight_presence(&model, &mask, &data, 0, 0, 0, &est).is_err());
    }

    #[test]
    fn unclamped_mi_is_nearly_non_negative() {
        // independent conditionals drawn from the same law
        let a = normals(10_000, 8);
        let b = normals(10_000, 9);
        let mi = mi_from_conditionals(&a, &b, &HistogramEstimator::default()).unwrap();
        assert!(mi.raw >= -0.02, "{mi:?}");
        assert!(mi.value >= 0.0);
    }

    #[test]
    fn rank_layer_shape_and_zero_layer() {
        let specs = [LayerSpec::new(4, 3, ActivationKind::Relu).unwrap(), LayerSpec::new(3, 2, ActivationKind::Identity).unwrap()];
        let model = MlpModel::zeros(&specs).unwrap();
        let mask = PruneMask::all_active(&model);
        let data = DenseMatrix::from_fn(50, 4, |r, c| (r * 4 + c) as f32 / 200.0);
        let m = mi_rank_layer(&model, &mask, &data, 0, &HistogramEstimator::default(), 30).unwrap();
        assert_eq!((m.rows, m.cols), (4, 3));
        assert!(m.values.iter().all(|&v| v == 0.0));

        let model = MlpModel::he_uniform(&specs, 1).unwrap();
        let m = mi_rank_layer(&model, &mask, &data, 1, &HistogramEstimator::default(), 30).unwrap();
        assert_eq!((m.rows, m.cols), (3, 2));
    }

    fn single_layer(act: ActivationKind, bias: f32) -> MlpModel {
        let specs = [LayerSpec::new(3, 4, act).unwrap(), LayerSpec::new(4, 2, ActivationKind::Identity).unwrap()];
        let mut model = MlpModel::he_uniform(&specs, 2).unwrap();
        model.layers_mut()[0].weights = DenseMatrix::from_fn(3, 4, |_, _| 0.1);
        model.layers_mut()[0].bias = vec![bias; 4];
        model
    }

    #[test]
    fn occupancy_examples() {
        let data = DenseMatrix::from_fn(30, 3, |r, c| ((r + c) % 5) as f32 / 5.0);
        let relu = single_layer(ActivationKind::Relu, -10.0);
        let occ = blind_range_occupancy(&relu, &PruneMask::all_active(&relu), &data, 1e-6).unwrap();
        assert_eq!(occ.layers, vec![1.0]);

        let leaky = single_layer(ActivationKind::LeakyRelu { slope: 0.01 }, -10.0);
        let occ = blind_range_occupancy(&leaky, &PruneMask::all_active(&leaky), &data, 1e-3).unwrap();
        assert_eq!(occ.layers, vec![0.0]);

        // both tails count for saturating activations
        let data = DenseMatrix::from_fn(2, 3, |r, _| if r == 0 { 100.0 } else { -100.0 });
        let tanh = single_layer(ActivationKind::Tanh, 0.0);
        let occ = blind_range_occupancy(&tanh, &PruneMask::all_active(&tanh), &data, 1e-2).unwrap();
        assert_eq!(occ.layers, vec![1.0]);
        assert!(blind_range_occupancy(&tanh, &PruneMask::all_active(&tanh), &data, -1.0).is_err());
    }
}
