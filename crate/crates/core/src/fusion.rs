//! Per-sample scale weights for training and accuracy-weighted fusion of
//! the scale outputs at inference.

use adamd_numerics::{Tensor, BCE_CLAMP};

use crate::error::{Error, Result};

/// Which branch a sample's weighting singles out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightRule {
    /// Lowest-loss branch gets weight 1, every other branch `alpha`.
    BoostBest,
    /// Highest-loss branch gets `alpha`, every other branch 1.
    SuppressWorst,
}

/// Weights of one sample across the K scales.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleWeights(pub Vec<f64>);

/// Weights from per-branch losses of one sample. Ties go to the lowest
/// scale index.
pub fn sample_scale_weights(losses: &[f64], alpha: f64, rule: WeightRule) -> Result<ScaleWeights> {
    if losses.is_empty() || losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("branch losses", format!("need finite values, got {losses:?}")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid("alpha", format!("{alpha} outside (0, 1]")));
    }
    let pick = |better: fn(f64, f64) -> bool| {
        let mut best = 0;
        for (k, &l) in losses.iter().enumerate().skip(1) {
            if better(l, losses[best]) {
                best = k;
            }
        }
        best
    };
    let w = match rule {
        WeightRule::BoostBest => {
            let k = pick(|a, b| a < b);
            (0..losses.len()).map(|i| if i == k { 1.0 } else { alpha }).collect()
        }
        WeightRule::SuppressWorst => {
            let k = pick(|a, b| a > b);
            (0..losses.len()).map(|i| if i == k { alpha } else { 1.0 }).collect()
        }
    };
    Ok(ScaleWeights(w))
}

/// Mean binary cross-entropy of one branch on one sample over the unmasked
/// cells; `mask` holds one entry per frame and applies to all classes.
pub fn branch_loss(pred: &[f64], target: &[f64], frame_mask: &[f64], classes: usize) -> f64 {
    let mut total = 0.0;
    let mut count = 0.0;
    for (i, (&p, &y)) in pred.iter().zip(target).enumerate() {
        let m = frame_mask[i / classes];
        if m == 0.0 {
            continue;
        }
        let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        total -= m * (y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        count += m;
    }
    if count > 0.0 {
        total / count
    } else {
        0.0
    }
}

/// Fusion weights `w` and the validation scores `v` they were derived from.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionWeights {
    pub w: Vec<f64>,
    pub v: Vec<f64>,
}

impl FusionWeights {
    pub fn uniform(k: usize) -> Self {
        FusionWeights {
            w: vec![1.0 / k as f64; k],
            v: vec![1.0; k],
        }
    }

    /// `w_k = v_k / Σv`; all-zero scores give uniform weights.
    pub fn from_scores(v: Vec<f64>) -> Result<Self> {
        if v.is_empty() || v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::invalid("validation scores", format!("need finite non-negative values, got {v:?}")));
        }
        let total: f64 = v.iter().sum();
        let w = if total > 0.0 {
            v.iter().map(|x| x / total).collect()
        } else {
            vec![1.0 / v.len() as f64; v.len()]
        };
        Ok(FusionWeights { w, v })
    }

    pub fn one_hot(k: usize, index: usize) -> Self {
        let mut w = vec![0.0; k];
        w[index] = 1.0;
        FusionWeights { v: w.clone(), w }
    }
}

/// How validation scores are measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreKind {
    /// Fraction of frames whose thresholded prediction equals the label.
    Accuracy,
    /// `exp(-mean BCE)`.
    ExpNegBce,
}

/// Running per-scale validation statistics.
#[derive(Clone, Debug)]
pub struct ScoreAccumulator {
    kind: ScoreKind,
    threshold: f64,
    sums: Vec<f64>,
    cells: f64,
}

impl ScoreAccumulator {
    pub fn new(k: usize, kind: ScoreKind, threshold: f64) -> Self {
        ScoreAccumulator {
            kind,
            threshold,
            sums: vec![0.0; k],
            cells: 0.0,
        }
    }

    /// Adds one file: `preds[k]` and `labels` are `[frames, C]`.
    pub fn add(&mut self, preds: &[Tensor], labels: &Tensor) -> Result<()> {
        if preds.len() != self.sums.len() {
            return Err(Error::invalid(
                "scale predictions",
                format!("expected {}, got {}", self.sums.len(), preds.len()),
            ));
        }
        for (k, p) in preds.iter().enumerate() {
            if p.shape() != labels.shape() {
                return Err(Error::invalid(
                    "scale predictions",
                    format!("shape {:?} against labels {:?}", p.shape(), labels.shape()),
                ));
            }
            self.sums[k] += match self.kind {
                ScoreKind::Accuracy => p
                    .data()
                    .iter()
                    .zip(labels.data())
                    .filter(|(&p, &y)| (p >= self.threshold) == (y >= 0.5))
                    .count() as f64,
                ScoreKind::ExpNegBce => {
                    let frames = labels.shape()[0];
                    let c = labels.len() / frames.max(1);
                    branch_loss(p.data(), labels.data(), &vec![1.0; frames], c) * labels.len() as f64
                }
            };
        }
        self.cells += labels.len() as f64;
        Ok(())
    }

    pub fn scores(&self) -> Result<Vec<f64>> {
        if self.cells == 0.0 {
            return Err(Error::invalid("validation set", "no frames scored"));
        }
        Ok(self
            .sums
            .iter()
            .map(|s| match self.kind {
                ScoreKind::Accuracy => s / self.cells,
                ScoreKind::ExpNegBce => (-s / self.cells).exp(),
            })
            .collect())
    }

    pub fn weights(&self) -> Result<FusionWeights> {
        FusionWeights::from_scores(self.scores()?)
    }
}

/// `Σ_k w_k p_k`, frame by frame.
pub fn fuse(preds: &[Tensor], weights: &FusionWeights) -> Result<Tensor> {
    if preds.is_empty() || preds.len() != weights.w.len() {
        return Err(Error::invalid(
            "fusion",
            format!("{} predictions for {} weights", preds.len(), weights.w.len()),
        ));
    }
    let shape = preds[0].shape().to_vec();
    if let Some(p) = preds.iter().find(|p| p.shape() != shape) {
        return Err(Error::invalid("fusion", format!("shape {:?} differs from {shape:?}", p.shape())));
    }
    let mut out = vec![0.0; preds[0].len()];
    for (p, &w) in preds.iter().zip(&weights.w) {
        for (o, v) in out.iter_mut().zip(p.data()) {
            *o += w * v;
        }
    }
    Ok(Tensor::new(&shape, out)?)
}
