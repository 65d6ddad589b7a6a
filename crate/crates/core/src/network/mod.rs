//! Fully connected classifier: forward pass with cached trace, cross-entropy,
//! the hidden-activation L1 penalty and exact backpropagation under a mask.

mod checkpoint;
mod train;

pub use checkpoint::{checkpoint_len, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use train::{adam_step, fine_tune, train, AdamConfig, AdamState, FineTuneConfig, TrainConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{dgemm, ActivationKind, DenseMatrix};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: ActivationKind,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: ActivationKind) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::input(format!("layer dims must be positive, got {in_dim}x{out_dim}")));
        }
        Ok(LayerSpec { in_dim, out_dim, activation })
    }
}

/// 784 -> 392 -> 196 -> 10 with the given hidden activation and identity logits.
pub fn default_architecture(hidden: ActivationKind) -> Vec<LayerSpec> {
    vec![
        LayerSpec { in_dim: 784, out_dim: 392, activation: hidden },
        LayerSpec { in_dim: 392, out_dim: 196, activation: hidden },
        LayerSpec { in_dim: 196, out_dim: 10, activation: ActivationKind::Identity },
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// `in_dim x out_dim`, row `i` holds the outgoing weights of input `i`.
    pub weights: DenseMatrix,
    pub bias: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
}

impl MlpModel {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::input("model needs at least one layer"));
        }
        for (k, layer) in layers.iter().enumerate() {
            let s = layer.spec;
            if s.in_dim == 0 || s.out_dim == 0 {
                return Err(Error::input(format!("layer {k} has an empty dimension")));
            }
            if layer.weights.shape() != (s.in_dim, s.out_dim) || layer.bias.len() != s.out_dim {
                return Err(Error::shape(
                    "MlpModel::new",
                    format!(
                        "layer {k}: spec {}x{}, weights {:?}, bias {}",
                        s.in_dim,
                        s.out_dim,
                        layer.weights.shape(),
                        layer.bias.len()
                    ),
                ));
            }
            if let Some(next) = layers.get(k + 1) {
                if next.spec.in_dim != s.out_dim {
                    return Err(Error::shape(
                        "MlpModel::new",
                        format!("layer {k} emits {} but layer {} takes {}", s.out_dim, k + 1, next.spec.in_dim),
                    ));
                }
            }
        }
        Ok(MlpModel { layers })
    }

    pub fn zeros(specs: &[LayerSpec]) -> Result<Self> {
        MlpModel::new(
            specs
                .iter()
                .map(|&spec| Layer {
                    spec,
                    weights: DenseMatrix::zeros(spec.in_dim, spec.out_dim),
                    bias: vec![0.0; spec.out_dim],
                })
                .collect(),
        )
    }

    /// He-uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
    pub fn he_uniform(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = MlpModel::zeros(specs)?;
        for layer in &mut model.layers {
            let bound = (6.0 / layer.spec.in_dim as f64).sqrt() as f32;
            for w in layer.weights.as_mut_slice() {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.out_dim
    }

    /// Number of prunable parameters (weights only, biases excluded).
    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerMask {
    rows: usize,
    cols: usize,
    active: Vec<bool>,
}

impl LayerMask {
    pub fn all_active(rows: usize, cols: usize) -> Self {
        LayerMask { rows, cols, active: vec![true; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, active: Vec<bool>) -> Result<Self> {
        if active.len() != rows * cols {
            return Err(Error::shape("LayerMask::from_vec", format!("{} bits for {rows}x{cols}", active.len())));
        }
        Ok(LayerMask { rows, cols, active })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn is_active(&self, r: usize, c: usize) -> bool {
        self.active[r * self.cols + c]
    }

    pub fn set_active(&mut self, r: usize, c: usize, on: bool) {
        self.active[r * self.cols + c] = on;
    }

    pub fn bits(&self) -> &[bool] {
        &self.active
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

/// Per-layer active/pruned flags, congruent with a model's weight matrices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PruneMask {
    layers: Vec<LayerMask>,
}

impl PruneMask {
    pub fn all_active(model: &MlpModel) -> Self {
        PruneMask {
            layers: model
                .layers
                .iter()
                .map(|l| LayerMask::all_active(l.spec.in_dim, l.spec.out_dim))
                .collect(),
        }
    }

    pub fn from_layers(layers: Vec<LayerMask>) -> Self {
        PruneMask { layers }
    }

    pub fn layers(&self) -> &[LayerMask] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &LayerMask {
        &self.layers[l]
    }

    pub fn is_active(&self, l: usize, r: usize, c: usize) -> bool {
        self.layers[l].is_active(r, c)
    }

    pub fn prune(&mut self, l: usize, r: usize, c: usize) {
        self.layers[l].set_active(r, c, false);
    }

    pub fn total(&self) -> usize {
        self.layers.iter().map(|m| m.active.len()).sum()
    }

    pub fn active_count(&self) -> usize {
        self.layers.iter().map(LayerMask::active_count).sum()
    }

    pub fn pruned_count(&self) -> usize {
        self.total() - self.active_count()
    }

    pub fn sparsity(&self) -> f64 {
        self.pruned_count() as f64 / self.total() as f64
    }

    pub fn check_congruent(&self, model: &MlpModel) -> Result<()> {
        let ok = self.layers.len() == model.layers.len()
            && self
                .layers
                .iter()
                .zip(&model.layers)
                .all(|(m, l)| m.shape() == l.weights.shape());
        if ok {
            Ok(())
        } else {
            Err(Error::shape("PruneMask", "mask is not congruent with the model"))
        }
    }

    /// Forces every pruned weight of `model` to exactly zero.
    pub fn apply(&self, model: &mut MlpModel) {
        for (m, layer) in self.layers.iter().zip(&mut model.layers) {
            for (w, &on) in layer.weights.as_mut_slice().iter_mut().zip(&m.active) {
                if !on {
                    *w = 0.0;
                }
            }
        }
    }
}

/// Cached per-layer pre-activations and activations of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub input: DenseMatrix,
    pub pre: Vec<DenseMatrix>,
    pub post: Vec<DenseMatrix>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    pub fn logits(&self) -> &DenseMatrix {
        self.post.last().expect("trace has at least one layer")
    }

    /// Input seen by layer `l`.
    pub fn layer_input(&self, l: usize) -> &DenseMatrix {
        if l == 0 {
            &self.input
        } else {
            &self.post[l - 1]
        }
    }
}

/// Effective `W ⊙ mask` for every layer, widened to `f64`.
pub(crate) fn masked_weights(model: &MlpModel, mask: &PruneMask) -> Vec<Vec<f64>> {
    model
        .layers
        .iter()
        .zip(&mask.layers)
        .map(|(layer, m)| {
            layer
                .weights
                .as_slice()
                .iter()
                .zip(&m.active)
                .map(|(&w, &on)| if on { w as f64 } else { 0.0 })
                .collect()
        })
        .collect()
}

/// `x · wm + bias` for one layer, returned as a row-major `rows x out_dim` buffer.
pub(crate) fn preactivation(layer: &Layer, wm: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
    let (k, n) = (layer.spec.in_dim, layer.spec.out_dim);
    let mut z = vec![0.0; rows * n];
    dgemm(rows, k, n, x, false, wm, false, &mut z);
    for row in z.chunks_exact_mut(n) {
        for (v, &b) in row.iter_mut().zip(&layer.bias) {
            *v += b as f64;
        }
    }
    z
}

pub(crate) fn forward_with(model: &MlpModel, wm: &[Vec<f64>], batch: &DenseMatrix) -> ForwardTrace {
    let rows = batch.rows();
    let mut pre = Vec::with_capacity(model.layers.len());
    let mut post = Vec::with_capacity(model.layers.len());
    let mut x = batch.to_f64();
    for (layer, w) in model.layers.iter().zip(wm) {
        let z = preactivation(layer, w, &x, rows);
        let act = layer.spec.activation;
        // The next layer consumes the stored f32 activations.
        let a = DenseMatrix::from_f64(rows, layer.spec.out_dim, &z.iter().map(|&v| act.apply(v)).collect::<Vec<_>>());
        x = a.to_f64();
        pre.push(DenseMatrix::from_f64(rows, layer.spec.out_dim, &z));
        post.push(a);
    }
    ForwardTrace { input: batch.clone(), pre, post }
}

pub fn forward(model: &MlpModel, mask: &PruneMask, batch: &DenseMatrix) -> Result<(DenseMatrix, ForwardTrace)> {
    mask.check_congruent(model)?;
    if batch.cols() != model.input_dim() {
        return Err(Error::shape(
            "forward",
            format!("batch has {} features, model expects {}", batch.cols(), model.input_dim()),
        ));
    }
    let trace = forward_with(model, &masked_weights(model, mask), batch);
    Ok((trace.logits().clone(), trace))
}

/// Mean softmax cross-entropy and its gradient `(softmax - onehot) / batch`.
pub fn cross_entropy(logits: &DenseMatrix, labels: &[usize]) -> Result<(f64, DenseMatrix)> {
    let (rows, classes) = logits.shape();
    if rows != labels.len() {
        return Err(Error::shape("cross_entropy", format!("{rows} logit rows vs {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::input(format!("label {bad} out of range for {classes} classes")));
    }
    if rows == 0 {
        return Ok((0.0, DenseMatrix::zeros(0, classes)));
    }
    let scale = 1.0 / rows as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; rows * classes];
    let mut probs = vec![0.0; classes];
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let mut sum = 0.0;
        for (p, &v) in probs.iter_mut().zip(row) {
            *p = (v as f64 - max).exp();
            sum += *p;
        }
        total += sum.ln() + max - row[label] as f64;
        for (c, p) in probs.iter().enumerate() {
            let onehot = if c == label { 1.0 } else { 0.0 };
            grad[r * classes + c] = (p / sum - onehot) * scale;
        }
    }
    Ok((total * scale, DenseMatrix::from_f64(rows, classes, &grad)))
}

/// Strength of the L1 penalty on hidden activations; 0 disables it.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossConfig {
    pub lambda_rl1: f64,
}

impl LossConfig {
    pub fn new(lambda_rl1: f64) -> Result<Self> {
        if !(lambda_rl1 >= 0.0 && lambda_rl1.is_finite()) {
            return Err(Error::input(format!("lambda_rl1 must be >= 0, got {lambda_rl1}")));
        }
        Ok(LossConfig { lambda_rl1 })
    }
}

/// Batch mean of the summed absolute hidden activations (logits excluded).
pub fn hidden_activation_l1(trace: &ForwardTrace) -> f64 {
    let hidden = trace.post.len().saturating_sub(1);
    let total: f64 = trace.post[..hidden]
        .iter()
        .flat_map(|a| a.as_slice())
        .map(|&v| (v as f64).abs())
        .sum();
    total / trace.batch_size().max(1) as f64
}

pub fn regularized_loss(base: f64, trace: &ForwardTrace, cfg: &LossConfig) -> f64 {
    if cfg.lambda_rl1 == 0.0 {
        return base;
    }
    base + cfg.lambda_rl1 * hidden_activation_l1(trace)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub dw: DenseMatrix,
    pub db: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

pub(crate) fn backward_with(
    model: &MlpModel,
    mask: &PruneMask,
    wm: &[Vec<f64>],
    trace: &ForwardTrace,
    dlogits: &DenseMatrix,
    cfg: &LossConfig,
) -> Gradients {
    let rows = trace.batch_size();
    let last = model.layers.len() - 1;
    let l1_scale = cfg.lambda_rl1 / rows.max(1) as f64;
    let mut grads = Vec::with_capacity(model.layers.len());
    // Gradient w.r.t. the current layer's activations.
    let mut d_act = dlogits.to_f64();
    for l in (0..=last).rev() {
        let layer = &model.layers[l];
        let (k, n) = (layer.spec.in_dim, layer.spec.out_dim);
        let act = layer.spec.activation;
        if l != last && l1_scale != 0.0 {
            for (d, &a) in d_act.iter_mut().zip(trace.post[l].as_slice()) {
                // sub-gradient of |a| is 0 at a = 0
                if a > 0.0 {
                    *d += l1_scale;
                } else if a < 0.0 {
                    *d -= l1_scale;
                }
            }
        }
        let d_pre: Vec<f64> = d_act
            .iter()
            .zip(trace.pre[l].as_slice())
            .map(|(&d, &z)| d * act.derivative(z as f64))
            .collect();

        let x = trace.layer_input(l).to_f64();
        let mut dw = vec![0.0; k * n];
        dgemm(k, rows, n, &x, true, &d_pre, false, &mut dw);
        for (g, &on) in dw.iter_mut().zip(mask.layers[l].bits()) {
            if !on {
                *g = 0.0;
            }
        }
        let mut db = vec![0.0; n];
        for row in d_pre.chunks_exact(n) {
            for (acc, &d) in db.iter_mut().zip(row) {
                *acc += d;
            }
        }
        if l > 0 {
            let mut prev = vec![0.0; rows * k];
            dgemm(rows, n, k, &d_pre, false, &wm[l], true, &mut prev);
            d_act = prev;
        }
        grads.push(LayerGrad {
            dw: DenseMatrix::from_f64(k, n, &dw),
            db: db.iter().map(|&v| v as f32).collect(),
        });
    }
    grads.reverse();
    Gradients { layers: grads }
}

/// Exact gradients of `regularized_loss(cross_entropy(..))`; masked entries are 0.
pub fn backward(
    model: &MlpModel,
    mask: &PruneMask,
    trace: &ForwardTrace,
    dlogits: &DenseMatrix,
    cfg: &LossConfig,
) -> Result<Gradients> {
    mask.check_congruent(model)?;
    if trace.pre.len() != model.layers.len() || dlogits.shape() != trace.logits().shape() {
        return Err(Error::shape("backward", "trace or dlogits does not match the model"));
    }
    Ok(backward_with(model, mask, &masked_weights(model, mask), trace, dlogits, cfg))
}
