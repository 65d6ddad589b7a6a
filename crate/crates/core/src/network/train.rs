use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{backward_with, cross_entropy, forward_with, masked_weights, regularized_loss, Gradients, LossConfig, MlpModel, PruneMask};
use crate::dataset::{batches, MnistSplit};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..AdamConfig::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::input(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::input(format!("betas must lie in [0, 1), got ({}, {})", self.beta1, self.beta2)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::input("adam eps must be > 0"));
        }
        Ok(())
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    w: Vec<f32>,
    b: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Moments>,
    second: Vec<Moments>,
}

impl AdamState {
    pub fn new(model: &MlpModel, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        let zeros = || -> Vec<Moments> {
            model
                .layers()
                .iter()
                .map(|l| Moments { w: vec![0.0; l.weights.len()], b: vec![0.0; l.bias.len()] })
                .collect()
        };
        Ok(AdamState { config, step: 0, first: zeros(), second: zeros() })
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

#[inline]
fn adam_update(param: &mut f32, g: f32, m: &mut f32, v: &mut f32, cfg: &AdamConfig, c1: f64, c2: f64) {
    let g = g as f64;
    let m_new = cfg.beta1 * *m as f64 + (1.0 - cfg.beta1) * g;
    let v_new = cfg.beta2 * *v as f64 + (1.0 - cfg.beta2) * g * g;
    *m = m_new as f32;
    *v = v_new as f32;
    let m_hat = m_new / c1;
    let v_hat = v_new / c2;
    *param = (*param as f64 - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps)) as f32;
}

/// One bias-corrected Adam update; pruned weights end at exactly zero.
pub fn adam_step(state: &mut AdamState, model: &mut MlpModel, grads: &Gradients, mask: &PruneMask) -> Result<()> {
    mask.check_congruent(model)?;
    let congruent = grads.layers.len() == model.layers().len()
        && state.first.len() == model.layers().len()
        && grads
            .layers
            .iter()
            .zip(model.layers())
            .all(|(g, l)| g.dw.shape() == l.weights.shape() && g.db.len() == l.bias.len());
    if !congruent {
        return Err(Error::shape("adam_step", "gradients or optimizer state do not match the model"));
    }
    state.step += 1;
    let cfg = state.config;
    let c1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for (l, layer) in model.layers_mut().iter_mut().enumerate() {
        let (m, v, g) = (&mut state.first[l], &mut state.second[l], &grads.layers[l]);
        let active = mask.layer(l).bits();
        let weights = layer.weights.as_mut_slice();
        for i in 0..weights.len() {
            if active[i] {
                adam_update(&mut weights[i], g.dw.as_slice()[i], &mut m.w[i], &mut v.w[i], &cfg, c1, c2);
            } else {
                weights[i] = 0.0;
            }
        }
        for i in 0..layer.bias.len() {
            adam_update(&mut layer.bias[i], g.db[i], &mut m.b[i], &mut v.b[i], &cfg, c1, c2);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 10, lr: 1e-3, batch_size: 64, loss: LossConfig::default(), seed: 0 }
    }
}

/// Mini-batch Adam over seeded shuffles; returns the mean regularized loss
/// of each epoch. The mask is applied before the first step.
pub fn train(model: &mut MlpModel, mask: &PruneMask, data: &MnistSplit, cfg: &TrainConfig) -> Result<Vec<f64>> {
    mask.check_congruent(model)?;
    if cfg.batch_size == 0 {
        return Err(Error::input("batch_size must be >= 1"));
    }
    if data.images.cols() != model.input_dim() {
        return Err(Error::shape("train", format!("data has {} features, model expects {}", data.images.cols(), model.input_dim())));
    }
    let mut state = AdamState::new(model, AdamConfig::with_lr(cfg.lr))?;
    mask.apply(model);
    let mut seeder = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let shuffle = seeder.next_u64();
        let mut total = 0.0;
        let mut seen = 0usize;
        for batch in batches(data, cfg.batch_size, Some(shuffle)) {
            let wm = masked_weights(model, mask);
            let trace = forward_with(model, &wm, &batch.images);
            let (base, dlogits) = cross_entropy(trace.logits(), &batch.labels)?;
            total += regularized_loss(base, &trace, &cfg.loss) * batch.labels.len() as f64;
            seen += batch.labels.len();
            let grads = backward_with(model, mask, &wm, &trace, &dlogits, &cfg.loss);
            adam_step(&mut state, model, &grads, mask)?;
        }
        epoch_losses.push(if seen == 0 { 0.0 } else { total / seen as f64 });
    }
    Ok(epoch_losses)
}

/// Post-pruning recovery schedule: by default one epoch at 1e-4 with a fresh optimizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub loss: LossConfig,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig { epochs: 1, lr: 1e-4, batch_size: 64, loss: LossConfig::default() }
    }
}

pub fn fine_tune(model: &mut MlpModel, mask: &PruneMask, data: &MnistSplit, cfg: &FineTuneConfig, seed: u64) -> Result<Vec<f64>> {
    train(
        model,
        mask,
        data,
        &TrainConfig { epochs: cfg.epochs, lr: cfg.lr, batch_size: cfg.batch_size, loss: cfg.loss, seed },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{forward, Layer, LayerGrad, LayerSpec};
    use crate::numerics::{ActivationKind, DenseMatrix};
    use rand::Rng;

    fn scalar_model(w: f32) -> MlpModel {
        MlpModel::new(vec![Layer {
            spec: LayerSpec::new(1, 1, ActivationKind::Identity).unwrap(),
            weights: DenseMatrix::from_vec(1, 1, vec![w]).unwrap(),
            bias: vec![0.0],
        }])
        .unwrap()
    }

    fn grads_of(dw: f32, db: f32) -> Gradients {
        Gradients { layers: vec![LayerGrad { dw: DenseMatrix::from_vec(1, 1, vec![dw]).unwrap(), db: vec![db] }] }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut model = scalar_model(0.7);
        let mask = PruneMask::all_active(&model);
        let mut state = AdamState::new(&model, AdamConfig::default()).unwrap();
        adam_step(&mut state, &mut model, &grads_of(0.0, 0.0), &mask).unwrap();
        assert_eq!(model.layers()[0].weights.get(0, 0), 0.7);
        assert_eq!(model.layers()[0].bias[0], 0.0);
    }

    #[test]
    fn first_step_by_hand() {
        let mut model = scalar_model(1.0);
        let mask = PruneMask::all_active(&model);
        let mut state = AdamState::new(&model, AdamConfig::default()).unwrap();
        adam_step(&mut state, &mut model, &grads_of(1.0, 0.0), &mask).unwrap();
        // m_hat = 1, v_hat = 1  =>  w' = 1 - 1e-3 / (1 + 1e-8)
        let want = (1.0 - 1e-3 / (1.0 + 1e-8)) as f32;
        assert_eq!(model.layers()[0].weights.get(0, 0), want);
        assert!((want - 0.999).abs() < 1e-6);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn invalid_betas_rejected() {
        let model = scalar_model(1.0);
        assert!(AdamState::new(&model, AdamConfig { beta1: 1.0, ..AdamConfig::default() }).is_err());
        assert!(AdamState::new(&model, AdamConfig { lr: 0.0, ..AdamConfig::default() }).is_err());
    }

    fn toy_problem(seed: u64) -> (MlpModel, MnistSplit) {
        let specs = [LayerSpec::new(6, 8, ActivationKind::Relu).unwrap(), LayerSpec::new(8, 3, ActivationKind::Identity).unwrap()];
        let model = MlpModel::he_uniform(&specs, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let images = DenseMatrix::from_fn(90, 6, |_, _| rng.random_range(0.0..1.0));
        let labels = (0..90).map(|r| {
            let row = images.row(r);
            if row[0] > row[1] { 0 } else if row[2] > 0.5 { 1 } else { 2 }
        }).collect();
        (model, MnistSplit::new(images, labels).unwrap())
    }

    #[test]
    fn pruned_weights_stay_zero_under_random_gradients() {
        let (mut model, _) = toy_problem(1);
        let mut mask = PruneMask::all_active(&model);
        mask.prune(0, 1, 2);
        mask.prune(0, 5, 7);
        mask.prune(1, 0, 0);
        let mut state = AdamState::new(&model, AdamConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let grads = Gradients {
                layers: model
                    .layers()
                    .iter()
                    .map(|l| LayerGrad {
                        dw: DenseMatrix::from_fn(l.spec.in_dim, l.spec.out_dim, |_, _| rng.random_range(-1.0..1.0)),
                        db: (0..l.spec.out_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    })
                    .collect(),
            };
            adam_step(&mut state, &mut model, &grads, &mask).unwrap();
        }
        assert_eq!(model.layers()[0].weights.get(1, 2).to_bits(), 0);
        assert_eq!(model.layers()[0].weights.get(5, 7).to_bits(), 0);
        assert_eq!(model.layers()[1].weights.get(0, 0).to_bits(), 0);
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let (mut model, data) = toy_problem(2);
        let before = model.clone();
        let losses = train(&mut model, &PruneMask::all_active(&before), &data, &TrainConfig { epochs: 0, ..TrainConfig::default() }).unwrap();
        assert!(losses.is_empty());
        assert_eq!(model, before);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (model, data) = toy_problem(3);
        let mask = PruneMask::all_active(&model);
        let cfg = TrainConfig { epochs: 30, lr: 1e-2, batch_size: 16, loss: LossConfig { lambda_rl1: 1e-3 }, seed: 5 };
        let (mut a, mut b) = (model.clone(), model.clone());
        let la = train(&mut a, &mask, &data, &cfg).unwrap();
        let lb = train(&mut b, &mask, &data, &cfg).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a, b);
        assert!(la.last().unwrap() < &(la[0] * 0.7), "{la:?}");
    }

    #[test]
    fn fine_tune_respects_mask() {
        let (mut model, data) = toy_problem(4);
        let mut mask = PruneMask::all_active(&model);
        for r in 0..8 {
            for c in 0..3 {
                mask.prune(1, r, c);
            }
        }
        mask.prune(0, 0, 0);
        let sparsity = mask.sparsity();
        fine_tune(&mut model, &mask, &data, &FineTuneConfig { lr: 1e-2, batch_size: 8, ..FineTuneConfig::default() }, 0).unwrap();
        assert!(model.layers()[1].weights.as_slice().iter().all(|&w| w.to_bits() == 0));
        assert_eq!(model.layers()[0].weights.get(0, 0).to_bits(), 0);
        let zeros = model.layers().iter().flat_map(|l| l.weights.as_slice()).filter(|&&w| w == 0.0).count();
        assert_eq!(zeros as f64 / mask.total() as f64, sparsity);
        let (logits, _) = forward(&model, &mask, &data.images).unwrap();
        assert!(logits.all_finite());
    }
}
