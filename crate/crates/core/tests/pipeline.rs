use aplab_core::dataset::{MnistSplit, SubsetSpec};
use aplab_core::infometrics::{mi_rank_layer, HistogramEstimator};
use aplab_core::network::{decode_checkpoint, encode_checkpoint, train, FineTuneConfig, LayerSpec, MlpModel, PruneMask, TrainConfig};
use aplab_core::numerics::{ActivationKind, DenseMatrix};
use aplab_core::pruner::{evaluate, prune_iteratively, PruneConfig, PruneSchedule};
use aplab_core::scoring::{contribution_stats, ImportanceConfig, ScorerKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const DIM: usize = 20;

fn blobs(n: usize, seed: u64) -> MnistSplit {
    let mut centers = ChaCha8Rng::seed_from_u64(99);
    let centers: Vec<Vec<f64>> = (0..10).map(|_| (0..DIM).map(|_| centers.random_range(0.0..1.0)).collect()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.15).unwrap();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
    let images = DenseMatrix::from_fn(n, DIM, |r, c| (centers[labels[r]][c] + noise.sample(&mut rng)).max(0.0) as f32);
    MnistSplit::new(images, labels).unwrap()
}

fn trained(act: ActivationKind) -> (MlpModel, MnistSplit, MnistSplit) {
    let specs = [
        LayerSpec::new(DIM, 24, act).unwrap(),
        LayerSpec::new(24, 16, act).unwrap(),
        LayerSpec::new(16, 10, ActivationKind::Identity).unwrap(),
    ];
    let mut model = MlpModel::he_uniform(&specs, 0).unwrap();
    let train_set = blobs(3000, 1);
    let test_set = blobs(1000, 2);
    let mask = PruneMask::all_active(&model);
    train(&mut model, &mask, &train_set, &TrainConfig { epochs: 5, ..TrainConfig::default() }).unwrap();
    (model, train_set, test_set)
}

fn scorers() -> Vec<ScorerKind> {
    let subset = SubsetSpec::new(0.5, 7).unwrap();
    vec![
        ScorerKind::Contribution { importance: ImportanceConfig::default(), subset },
        ScorerKind::Magnitude,
        ScorerKind::Wanda { subset },
        ScorerKind::Random { seed: 4 },
    ]
}

#[test]
fn baseline_learns_the_blobs() {
    let (model, _, test) = trained(ActivationKind::Relu);
    let acc = evaluate(&model, &PruneMask::all_active(&model), &test).unwrap();
    assert!(acc > 0.9, "{acc}");
}

#[test]
fn every_scorer_meets_the_mask_contract() {
    let (model, train_set, test) = trained(ActivationKind::Relu);
    let total = model.weight_count();
    let schedule = PruneSchedule::new(0.5, 0.15).unwrap();
    for scorer in scorers() {
        let cfg = PruneConfig { schedule, scorer, fine_tune: FineTuneConfig::default(), seed: 3, resample_subset: false };
        let out = prune_iteratively(model.clone(), &train_set, &test, &cfg).unwrap();
        assert_eq!(out.mask.pruned_count(), (0.5 * total as f64).round() as usize, "{scorer}");
        let records = &out.report.records;
        assert_eq!(records.len(), 5);
        let pruned: Vec<usize> = records.iter().map(|r| r.pruned).collect();
        let want: Vec<usize> = [0.0, 0.15, 0.30, 0.45, 0.5].iter().map(|f| (f * total as f64).round() as usize).collect();
        assert_eq!(pruned, want, "{scorer}");
        assert!(records.iter().all(|r| (0.0..=1.0).contains(&r.accuracy)));

        let (saved, saved_mask) = decode_checkpoint(&encode_checkpoint(&out.model, &out.mask).unwrap()).unwrap();
        assert_eq!(saved_mask, out.mask);
        for (l, layer) in saved.layers().iter().enumerate() {
            let (rows, cols) = layer.weights.shape();
            for r in 0..rows {
                for c in 0..cols {
                    if !saved_mask.is_active(l, r, c) {
                        assert_eq!(layer.weights.get(r, c).to_bits(), 0);
                    }
                }
            }
        }
    }
}

#[test]
fn pruned_weights_never_revive() {
    let (model, train_set, test) = trained(ActivationKind::Tanh);
    let mut prev = PruneMask::all_active(&model);
    for target in [0.2, 0.4, 0.6] {
        let cfg = PruneConfig {
            schedule: PruneSchedule::new(target, 0.2).unwrap(),
            scorer: scorers()[0],
            fine_tune: FineTuneConfig::default(),
            seed: 1,
            resample_subset: false,
        };
        let out = prune_iteratively(model.clone(), &train_set, &test, &cfg).unwrap();
        // a longer run replays the shorter one before continuing
        for (a, b) in prev.layers().iter().zip(out.mask.layers()) {
            assert!(a.bits().iter().zip(b.bits()).all(|(&was, &now)| was || !now));
        }
        prev = out.mask;
    }
}

#[test]
fn pruning_is_deterministic() {
    let (model, train_set, test) = trained(ActivationKind::Sigmoid);
    let cfg = PruneConfig {
        schedule: PruneSchedule::new(0.5, 0.25).unwrap(),
        scorer: scorers()[0],
        fine_tune: FineTuneConfig::default(),
        seed: 9,
        resample_subset: false,
    };
    let a = prune_iteratively(model.clone(), &train_set, &test, &cfg).unwrap();
    let b = prune_iteratively(model, &train_set, &test, &cfg).unwrap();
    assert_eq!(a.mask, b.mask);
    assert_eq!(encode_checkpoint(&a.model, &a.mask).unwrap(), encode_checkpoint(&b.model, &b.mask).unwrap());

    let fresh = PruneConfig { resample_subset: true, ..cfg };
    let c = prune_iteratively(b.model.clone(), &train_set, &test, &fresh).unwrap();
    let d = prune_iteratively(b.model, &train_set, &test, &fresh).unwrap();
    assert_eq!(c.mask, d.mask);
    assert_eq!(c.mask.pruned_count(), a.mask.pruned_count());
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            out[k] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn mi_ranking_agrees_with_contribution_ranking() {
    let (model, train_set, _) = trained(ActivationKind::Relu);
    let mask = PruneMask::all_active(&model);
    let data = train_set.images.select_rows(&(0..2000).collect::<Vec<_>>());
    let stats = contribution_stats(&model, &mask, &data).unwrap();
    let mi = mi_rank_layer(&model, &mask, &data, 1, &HistogramEstimator::default(), 2000).unwrap();
    let rho = pearson(&ranks(&mi.values), &ranks(&stats.layers[1].mean));
    assert!(rho > 0.5, "spearman {rho}");
}
