//! Training loop with per-sample scale weighting and per-epoch fusion weights.

use std::fmt::Write as _;

use adamd_numerics::{AdamState, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::fusion::{branch_loss, sample_scale_weights, FusionWeights, ScaleWeights, ScoreAccumulator, ScoreKind, WeightRule};
use crate::model::{Model, ModelConfig};

/// How per-sample branch weights are chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightMode {
    /// From each sample's branch losses, with the given rule.
    Adaptive { alpha: f64, rule: WeightRule },
    /// `boost` at one scale (0-based), 1 elsewhere, for every sample.
    Fixed { scale: usize, boost: f64 },
    /// All ones.
    Uniform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub mode: WeightMode,
    pub score: ScoreKind,
    /// Threshold used by the accuracy score.
    pub score_threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 100,
            batch_size: 45,
            mode: WeightMode::Adaptive {
                alpha: 0.1,
                rule: WeightRule::BoostBest,
            },
            score: ScoreKind::Accuracy,
            score_threshold: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// 30 epochs of batch 8, sized for the synthetic experiments.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        let bad = |r: String| Err(Error::invalid("train config", r));
        if !(self.lr > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return bad("lr, epochs and batch size must be positive".into());
        }
        match self.mode {
            WeightMode::Adaptive { alpha, .. } if !(alpha > 0.0 && alpha <= 1.0) => bad(format!("alpha {alpha} outside (0, 1]")),
            WeightMode::Fixed { scale, .. } if scale >= depth => bad(format!("scale {scale} out of range for {depth} scales")),
            WeightMode::Fixed { boost, .. } if !(boost > 0.0) => bad(format!("boost {boost} must be positive")),
            _ => Ok(()),
        }
    }
}

/// Branch weights of every sample in a batch, `[sample][scale]`.
pub fn batch_weights(mode: WeightMode, losses: &[Vec<f64>], depth: usize) -> Result<Vec<ScaleWeights>> {
    losses
        .iter()
        .map(|l| match mode {
            WeightMode::Adaptive { alpha, rule } => sample_scale_weights(l, alpha, rule),
            WeightMode::Fixed { scale, boost } => Ok(ScaleWeights((0..depth).map(|k| if k == scale { boost } else { 1.0 }).collect())),
            WeightMode::Uniform => Ok(ScaleWeights(vec![1.0; depth])),
        })
        .collect()
}

/// A whole file prepared for inference.
#[derive(Clone, Debug)]
pub struct EvalItem {
    pub file: String,
    /// Normalized features, right-padded with the last frame to a multiple
    /// of the model's unit.
    pub features: Tensor,
    /// `[valid, C]` frame labels.
    pub labels: Tensor,
    pub valid: usize,
}

/// Per-scale probabilities of one file, `[valid, C]` each, coarsest first.
pub fn predict_item(model: &Model, item: &EvalItem) -> Result<Vec<Tensor>> {
    let c = model.config.classes;
    model
        .predict(&item.features)?
        .into_iter()
        .map(|p| Ok(Tensor::new(&[item.valid, c], p.data()[..item.valid * c].to_vec())?))
        .collect()
}

/// Per-scale validation scores and the fusion weights derived from them.
pub fn validation_weights(model: &Model, val: &[EvalItem], kind: ScoreKind, threshold: f64) -> Result<FusionWeights> {
    if val.is_empty() {
        return Err(Error::invalid("validation set", "empty"));
    }
    let mut acc = ScoreAccumulator::new(model.config.depth, kind, threshold);
    for item in val {
        acc.add(&predict_item(model, item)?, &item.labels)?;
    }
    acc.weights()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean weighted loss per training sample.
    pub loss: f64,
    pub fusion: FusionWeights,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    /// `epoch,loss,v_1..v_K,w_1..w_K`, floats in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let k = self.epochs.first().map_or(0, |e| e.fusion.w.len());
        let mut out = String::from("epoch,loss");
        for prefix in ["v", "w"] {
            for i in 1..=k {
                write!(out, ",{prefix}_{i}").unwrap();
            }
        }
        out.push('\n');
        for e in &self.epochs {
            write!(out, "{},{}", e.epoch, e.loss).unwrap();
            for x in e.fusion.v.iter().chain(&e.fusion.w) {
                write!(out, ",{x}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the highest summed validation score.
    pub best: Model,
    pub best_fusion: FusionWeights,
    pub best_epoch: usize,
    pub history: TrainHistory,
}

const MODEL_STREAM: u64 = 0x6d6f64656c;
const SHUFFLE_STREAM: u64 = 0x73687566;

pub fn init_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ MODEL_STREAM);
    Model::new(config.clone(), &mut rng)
}

/// Stacks segments into `[B,1,τ,d]` inputs, `[B,τ,C]` targets and masks.
fn assemble(batch: &[&FeatureMatrix]) -> Result<(Tensor, Tensor, Tensor)> {
    let (tau, d, c) = (batch[0].frames(), batch[0].dims(), batch[0].classes());
    let mut x = Vec::with_capacity(batch.len() * tau * d);
    let mut y = Vec::with_capacity(batch.len() * tau * c);
    let mut m = Vec::with_capacity(batch.len() * tau * c);
    for s in batch {
        if (s.frames(), s.dims(), s.classes()) != (tau, d, c) {
            return Err(Error::invalid("training batch", "segments differ in shape"));
        }
        x.extend_from_slice(s.values.data());
        y.extend_from_slice(s.labels.data());
        for i in 0..tau {
            let v = if i < s.valid { 1.0 } else { 0.0 };
            m.extend(std::iter::repeat_n(v, c));
        }
    }
    let n = batch.len();
    Ok((
        Tensor::new(&[n, 1, tau, d], x)?,
        Tensor::new(&[n, tau, c], y)?,
        Tensor::new(&[n, tau, c], m)?,
    ))
}

/// One optimizer step on a batch; returns the summed weighted loss.
pub fn train_step(model: &mut Model, adam: &mut AdamState, batch: &[&FeatureMatrix], mode: WeightMode) -> Result<f64> {
    let (x, y, mask) = assemble(batch)?;
    let n = batch.len();
    let (tau, c) = (y.shape()[1], y.shape()[2]);
    let depth = model.config.depth;
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let fwd = model.forward_var(&mut tape, xv, true)?;
    let frame_masks: Vec<Vec<f64>> = batch.iter().map(|s| s.frame_mask()).collect();
    let losses: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            let cells = s * tau * c..(s + 1) * tau * c;
            fwd.preds
                .iter()
                .map(|&p| branch_loss(&tape.value(p).data()[cells.clone()], &y.data()[cells.clone()], &frame_masks[s], c))
                .collect()
        })
        .collect();
    let weights = batch_weights(mode, &losses, depth)?;
    let mut total = None;
    for (k, &p) in fwd.preds.iter().enumerate() {
        let w: Vec<f64> = weights.iter().map(|s| s.0[k]).collect();
        let l = tape.bce(p, &y, &w, Some(&mask))?;
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
    }
    let total = total.expect("at least two scales");
    let value = tape.value(total).item()?;
    if !value.is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            batch: 0,
            loss: value,
        });
    }
    tape.backward(total)?;
    let grads: Vec<Tensor> = fwd
        .bound
        .vars()
        .iter()
        .map(|&v| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
        .collect();
    drop(tape);
    adam.step(model.params.tensors_mut(), &grads)?;
    Ok(value)
}

/// Trains from a seeded initialization.
pub fn train(config: &ModelConfig, train_set: &[FeatureMatrix], val_set: &[EvalItem], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let model = init_model(config, cfg.seed)?;
    train_model(model, train_set, val_set, cfg)
}

pub fn train_model(mut model: Model, train_set: &[FeatureMatrix], val_set: &[EvalItem], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate(model.config.depth)?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set", "empty"));
    }
    let expected = (model.config.tau, model.config.d, model.config.classes);
    if let Some(s) = train_set.iter().find(|s| (s.frames(), s.dims(), s.classes()) != expected) {
        return Err(Error::invalid(
            "training set",
            format!(
                "segment is {}x{} with {} classes, model expects {expected:?}",
                s.frames(),
                s.dims(),
                s.classes()
            ),
        ));
    }
    let mut adam = AdamState::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory {
        seed: cfg.seed,
        epochs: Vec::with_capacity(cfg.epochs),
    };
    let mut best: Option<(f64, Model, FusionWeights, usize)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&FeatureMatrix> = chunk.iter().map(|&i| &train_set[i]).collect();
            sum += train_step(&mut model, &mut adam, &batch, cfg.mode).map_err(|e| match e {
                Error::Diverged { loss, .. } => Error::Diverged { epoch, batch: b, loss },
                other => other,
            })?;
        }
        if model.params.tensors().iter().any(|t| !t.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                batch: order.len().div_ceil(cfg.batch_size),
                loss: f64::NAN,
            });
        }
        let fusion = validation_weights(&model, val_set, cfg.score, cfg.score_threshold)?;
        let score: f64 = fusion.v.iter().sum();
        if best.as_ref().is_none_or(|(s, ..)| score > *s) {
            best = Some((score, model.clone(), fusion.clone(), epoch));
        }
        history.epochs.push(EpochRecord {
            epoch,
            loss: sum / train_set.len() as f64,
            fusion,
        });
    }
    let (_, best, best_fusion, best_epoch) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_fusion,
        best_epoch,
        history,
    })
}
