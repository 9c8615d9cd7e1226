use adamd_core::features::FeatureMatrix;
use adamd_core::fusion::{ScoreKind, WeightRule};
use adamd_core::model::ModelConfig;
use adamd_core::trainer::{init_model, train, train_step, EvalItem, TrainConfig, WeightMode};
use adamd_core::Error;
use adamd_numerics::{AdamState, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy() -> ModelConfig {
    ModelConfig {
        tau: 32,
        d: 16,
        depth: 4,
        channels: 4,
        mid_channels: 2,
        gru_hidden: vec![3, 3, 4, 4],
        gru_layers: 1,
        classes: 1,
    }
}

/// Noise with a bright band in mel bins 4..10 over a random span, labelled active.
fn segment(rng: &mut ChaCha8Rng, valid: usize) -> FeatureMatrix {
    let (t, d) = (32, 16);
    let on = rng.random_range(0..valid - 6);
    let len = rng.random_range(4..(valid - on).min(14));
    let mut x: Vec<f64> = (0..t * d).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mut y = vec![0.0; t];
    for i in on..on + len {
        y[i] = 1.0;
        for j in 4..10 {
            x[i * d + j] += 2.0;
        }
    }
    FeatureMatrix {
        values: Tensor::new(&[t, d], x).unwrap(),
        labels: Tensor::new(&[t, 1], y).unwrap(),
        valid,
        hop_s: 0.02,
        origin_s: 0.0,
    }
}

fn item(s: &FeatureMatrix) -> EvalItem {
    EvalItem {
        file: String::new(),
        features: s.values.clone(),
        labels: Tensor::new(&[s.valid, 1], s.labels.data()[..s.valid].to_vec()).unwrap(),
        valid: s.valid,
    }
}

fn data(seed: u64) -> (Vec<FeatureMatrix>, Vec<EvalItem>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train: Vec<FeatureMatrix> = (0..12).map(|i| segment(&mut rng, if i % 3 == 0 { 24 } else { 32 })).collect();
    let val: Vec<EvalItem> = (0..4).map(|_| item(&segment(&mut rng, 32))).collect();
    (train, val)
}

fn cfg(mode: WeightMode, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 1e-2,
        epochs,
        batch_size: 4,
        mode,
        score: ScoreKind::Accuracy,
        score_threshold: 0.5,
        seed,
    }
}

const ADAPTIVE: WeightMode = WeightMode::Adaptive {
    alpha: 0.1,
    rule: WeightRule::BoostBest,
};

#[test]
fn tiny_model_fits_a_separable_task() {
    let (train_set, val) = data(1);
    let out = train(&toy(), &train_set, &val, &cfg(ADAPTIVE, 25, 3)).unwrap();
    let h = &out.history.epochs;
    assert_eq!(h.len(), 25);
    let (first, last) = (h[0].loss, h[h.len() - 1].loss);
    assert!(last < 0.5 * first, "loss went from {first} to {last}");
    let best: f64 = out.best_fusion.v.iter().cloned().fold(0.0, f64::max);
    assert!(best > 0.9, "best validation accuracy {best}");
    assert!((out.best_fusion.w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let chosen = &h[out.best_epoch - 1].fusion;
    assert_eq!(chosen, &out.best_fusion);
    let best_sum: f64 = chosen.v.iter().sum();
    assert!(h.iter().all(|e| e.fusion.v.iter().sum::<f64>() <= best_sum));
}

#[test]
fn same_seed_gives_identical_history() {
    let (train_set, val) = data(2);
    let a = train(&toy(), &train_set, &val, &cfg(ADAPTIVE, 3, 7)).unwrap();
    let b = train(&toy(), &train_set, &val, &cfg(ADAPTIVE, 3, 7)).unwrap();
    assert_eq!(a.history.to_csv(), b.history.to_csv());
    assert_eq!(a.best.params, b.best.params);
    let c = train(&toy(), &train_set, &val, &cfg(ADAPTIVE, 3, 8)).unwrap();
    assert_ne!(a.history.to_csv(), c.history.to_csv());
}

#[test]
fn alpha_one_trains_exactly_like_uniform() {
    let (train_set, val) = data(3);
    let alpha_one = WeightMode::Adaptive {
        alpha: 1.0,
        rule: WeightRule::BoostBest,
    };
    let a = train(&toy(), &train_set, &val, &cfg(alpha_one, 2, 5)).unwrap();
    let u = train(&toy(), &train_set, &val, &cfg(WeightMode::Uniform, 2, 5)).unwrap();
    let f = train(&toy(), &train_set, &val, &cfg(WeightMode::Fixed { scale: 1, boost: 1.0 }, 2, 5)).unwrap();
    assert_eq!(a.history.to_csv(), u.history.to_csv());
    assert_eq!(f.history.to_csv(), u.history.to_csv());
}

#[test]
fn weighting_changes_the_update() {
    let (train_set, _) = data(4);
    let batch: Vec<&FeatureMatrix> = train_set.iter().take(4).collect();
    let step = |mode| {
        let mut m = init_model(&toy(), 9).unwrap();
        let mut adam = AdamState::new(1e-2);
        let loss = train_step(&mut m, &mut adam, &batch, mode).unwrap();
        (loss, m.params)
    };
    let (lu, pu) = step(WeightMode::Uniform);
    let (la, pa) = step(ADAPTIVE);
    let (lf, _) = step(WeightMode::Fixed { scale: 0, boost: 10.0 });
    assert!(la < lu, "down-weighting three scales must lower the summed loss");
    assert!(lf > lu);
    assert_ne!(pu, pa);
}

#[test]
fn bad_inputs_are_rejected() {
    let (train_set, val) = data(5);
    assert!(train(&toy(), &[], &val, &cfg(ADAPTIVE, 1, 0)).is_err());
    assert!(train(&toy(), &train_set, &[], &cfg(ADAPTIVE, 1, 0)).is_err());
    let wrong = ModelConfig { d: 32, ..toy() };
    assert!(train(&wrong, &train_set, &val, &cfg(ADAPTIVE, 1, 0)).is_err());
    let bad_alpha = WeightMode::Adaptive {
        alpha: 0.0,
        rule: WeightRule::BoostBest,
    };
    assert!(matches!(
        train(&toy(), &train_set, &val, &cfg(bad_alpha, 1, 0)),
        Err(Error::Invalid { .. })
    ));
    let bad_scale = WeightMode::Fixed { scale: 4, boost: 10.0 };
    assert!(train(&toy(), &train_set, &val, &cfg(bad_scale, 1, 0)).is_err());
}
