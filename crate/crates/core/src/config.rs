//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown or repeated
//! keys are errors. [`ExperimentConfig::to_text`] writes every key, so a
//! resolved config fully describes a run.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::features::FeatureParams;
use crate::fusion::{ScoreKind, WeightRule};
use crate::metrics::{default_grid, DecisionConfig, DetectionMode, DEFAULT_COLLAR_S};
use crate::model::ModelConfig;
use crate::synth::{Split, SynthConfig};
use crate::trainer::{TrainConfig, WeightMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeKind {
    Adaptive,
    FixedWeight,
    Uniform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub synth: SynthConfig,
    pub features: FeatureParams,
    /// Model settings; `classes` is taken from the dataset at train time.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub mode: ModeKind,
    pub alpha: f64,
    pub rule: WeightRule,
    /// 1-based scale for the fixed-weight mode.
    pub fixed_scale: usize,
    pub fixed_boost: f64,
    pub decision: DecisionConfig,
    pub collar_s: f64,
    pub sweep_grid: Vec<f64>,
}

/// Model size used with the desk feature settings.
pub fn desk_model() -> ModelConfig {
    ModelConfig {
        tau: 256,
        d: 64,
        depth: 4,
        channels: 32,
        mid_channels: 8,
        gru_hidden: vec![16, 16, 32, 32],
        gru_layers: 3,
        classes: 1,
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            synth: SynthConfig::default(),
            features: FeatureParams::desk(),
            model: desk_model(),
            train: TrainConfig::desk(),
            mode: ModeKind::Adaptive,
            alpha: 0.1,
            rule: WeightRule::BoostBest,
            fixed_scale: 1,
            fixed_boost: 10.0,
            decision: DecisionConfig::default(),
            collar_s: DEFAULT_COLLAR_S,
            sweep_grid: default_grid(),
        }
    }
}

fn list<T: std::str::FromStr>(v: &str) -> Option<Vec<T>> {
    v.split(',').map(|s| s.trim().parse().ok()).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Parses `lo:hi:step` or a comma list.
fn grid(v: &str) -> Option<Vec<f64>> {
    let parts: Vec<&str> = v.split(':').collect();
    if let [lo, hi, step] = parts[..] {
        let (lo, hi, step): (f64, f64, f64) = (lo.trim().parse().ok()?, hi.trim().parse().ok()?, step.trim().parse().ok()?);
        if !(step > 0.0) {
            return None;
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        return Some((0..=n).map(|i| ((lo + i as f64 * step) * 1e9).round() / 1e9).collect());
    }
    list(v)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: {k} set twice", n + 1)));
            }
            cfg.set(k, v).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key; used by the parser and by command-line overrides.
    pub fn set(&mut self, k: &str, v: &str) -> std::result::Result<(), String> {
        let bad = || format!("invalid value {v:?} for {k}");
        macro_rules! p {
            () => {
                v.parse().map_err(|_| bad())?
            };
        }
        let split_spec = |s: &str| match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        };
        match k {
            "seed" => self.seed = p!(),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "data.sample_rate" => self.synth.sample_rate = p!(),
            "data.clip_s" => self.synth.clip_s = p!(),
            "data.ebr_db" => self.synth.ebr_db = list(v).ok_or_else(bad)?,
            "data.background_rms" => self.synth.background_rms = p!(),
            "data.noise" => self.synth.noise_amplification = p!(),
            "data.polyphonic" => self.synth.polyphonic = p!(),
            "feature.win_s" => self.features.win_s = p!(),
            "feature.hop_s" => self.features.hop_s = p!(),
            "feature.n_fft" => self.features.n_fft = p!(),
            "feature.n_mels" => self.features.n_mels = p!(),
            "feature.segment_len" => self.features.segment_len = p!(),
            "feature.step_fraction" => self.features.step_fraction = p!(),
            "model.depth" => self.model.depth = p!(),
            "model.channels" => self.model.channels = p!(),
            "model.mid_channels" => self.model.mid_channels = p!(),
            "model.gru_hidden" => self.model.gru_hidden = list(v).ok_or_else(bad)?,
            "model.gru_layers" => self.model.gru_layers = p!(),
            "train.lr" => self.train.lr = p!(),
            "train.epochs" => self.train.epochs = p!(),
            "train.batch_size" => self.train.batch_size = p!(),
            "train.mode" => {
                self.mode = match v {
                    "adaptive" => ModeKind::Adaptive,
                    "fixed-weight" => ModeKind::FixedWeight,
                    "uniform" => ModeKind::Uniform,
                    _ => return Err(bad()),
                }
            }
            "train.alpha" => self.alpha = p!(),
            "train.rule" => {
                self.rule = match v {
                    "boost-best" => WeightRule::BoostBest,
                    "suppress-worst" => WeightRule::SuppressWorst,
                    _ => return Err(bad()),
                }
            }
            "train.scale" => self.fixed_scale = p!(),
            "train.boost" => self.fixed_boost = p!(),
            "train.score" => {
                self.train.score = match v {
                    "accuracy" => ScoreKind::Accuracy,
                    "exp-neg-bce" => ScoreKind::ExpNegBce,
                    _ => return Err(bad()),
                }
            }
            "train.score_threshold" => self.train.score_threshold = p!(),
            "decision.threshold" => self.decision.thresholds = list(v).ok_or_else(bad)?,
            "decision.filter_width" => self.decision.filter_width = p!(),
            "decision.min_active_frames" => self.decision.min_active_frames = p!(),
            "decision.mode" => {
                self.decision.mode = match v {
                    "monophonic" => DetectionMode::Monophonic,
                    "polyphonic" => DetectionMode::Polyphonic,
                    _ => return Err(bad()),
                }
            }
            "decision.collar_s" => self.collar_s = p!(),
            "sweep.grid" => self.sweep_grid = grid(v).ok_or_else(bad)?,
            _ => {
                let parts: Vec<&str> = k.split('.').collect();
                match parts[..] {
                    ["data", s, field] if split_spec(s).is_some() => {
                        let spec = match split_spec(s).unwrap() {
                            Split::Train => &mut self.synth.train,
                            Split::Val => &mut self.synth.val,
                            Split::Test => &mut self.synth.test,
                        };
                        match field {
                            "clips" => spec.clips = p!(),
                            "presence" => spec.presence = p!(),
                            "sources" => spec.sources_per_class = p!(),
                            "backgrounds" => spec.backgrounds = p!(),
                            _ => return Err(format!("unknown key {k}")),
                        }
                    }
                    _ => return Err(format!("unknown key {k}")),
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut synth = self.synth.clone();
        synth.seed = self.seed;
        synth.validate()?;
        self.features.validate()?;
        let model = self.model_config(self.synth.classes.len());
        model.validate()?;
        if model.tau != self.features.segment_len || model.d != self.features.n_mels {
            return Err(Error::Config(format!(
                "segment length {} and mel bands {} must be a valid model input",
                self.features.segment_len, self.features.n_mels
            )));
        }
        self.training(model.depth)?;
        self.decision.validate()?;
        if !(self.collar_s >= 0.0) {
            return Err(Error::Config(format!("collar {} must be non-negative", self.collar_s)));
        }
        if self.sweep_grid.is_empty() || self.sweep_grid.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::Config("sweep grid must be non-empty and inside (0, 1)".into()));
        }
        Ok(())
    }

    /// Model config with input size taken from the feature settings.
    pub fn model_config(&self, classes: usize) -> ModelConfig {
        ModelConfig {
            tau: self.features.segment_len,
            d: self.features.n_mels,
            classes,
            ..self.model.clone()
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn training(&self, depth: usize) -> Result<TrainConfig> {
        let mode = match self.mode {
            ModeKind::Adaptive => WeightMode::Adaptive {
                alpha: self.alpha,
                rule: self.rule,
            },
            ModeKind::FixedWeight => {
                if self.fixed_scale == 0 || self.fixed_scale > depth {
                    return Err(Error::Config(format!("fixed-weight scale {} outside 1..={depth}", self.fixed_scale)));
                }
                WeightMode::Fixed {
                    scale: self.fixed_scale - 1,
                    boost: self.fixed_boost,
                }
            }
            ModeKind::Uniform => WeightMode::Uniform,
        };
        let t = TrainConfig {
            mode,
            seed: self.seed,
            ..self.train.clone()
        };
        t.validate(depth)?;
        Ok(t)
    }

    pub fn to_text(&self) -> String {
        let s = &self.synth;
        let f = &self.features;
        let m = &self.model;
        let t = &self.train;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        kv("seed", self.seed.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv("data.sample_rate", s.sample_rate.to_string());
        kv("data.clip_s", s.clip_s.to_string());
        kv("data.ebr_db", join(&s.ebr_db));
        kv("data.background_rms", s.background_rms.to_string());
        kv("data.noise", s.noise_amplification.to_string());
        kv("data.polyphonic", s.polyphonic.to_string());
        for split in Split::ALL {
            let spec = s.split(split);
            kv(&format!("data.{split}.clips"), spec.clips.to_string());
            kv(&format!("data.{split}.presence"), spec.presence.to_string());
            kv(&format!("data.{split}.sources"), spec.sources_per_class.to_string());
            kv(&format!("data.{split}.backgrounds"), spec.backgrounds.to_string());
        }
        kv("feature.win_s", f.win_s.to_string());
        kv("feature.hop_s", f.hop_s.to_string());
        kv("feature.n_fft", f.n_fft.to_string());
        kv("feature.n_mels", f.n_mels.to_string());
        kv("feature.segment_len", f.segment_len.to_string());
        kv("feature.step_fraction", f.step_fraction.to_string());
        kv("model.depth", m.depth.to_string());
        kv("model.channels", m.channels.to_string());
        kv("model.mid_channels", m.mid_channels.to_string());
        kv("model.gru_hidden", join(&m.gru_hidden));
        kv("model.gru_layers", m.gru_layers.to_string());
        kv("train.lr", t.lr.to_string());
        kv("train.epochs", t.epochs.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        let mode = match self.mode {
            ModeKind::Adaptive => "adaptive",
            ModeKind::FixedWeight => "fixed-weight",
            ModeKind::Uniform => "uniform",
        };
        kv("train.mode", mode.into());
        kv("train.alpha", self.alpha.to_string());
        let rule = match self.rule {
            WeightRule::BoostBest => "boost-best",
            WeightRule::SuppressWorst => "suppress-worst",
        };
        kv("train.rule", rule.into());
        kv("train.scale", self.fixed_scale.to_string());
        kv("train.boost", self.fixed_boost.to_string());
        let score = match t.score {
            ScoreKind::Accuracy => "accuracy",
            ScoreKind::ExpNegBce => "exp-neg-bce",
        };
        kv("train.score", score.into());
        kv("train.score_threshold", t.score_threshold.to_string());
        kv("decision.threshold", join(&self.decision.thresholds));
        kv("decision.filter_width", self.decision.filter_width.to_string());
        kv("decision.min_active_frames", self.decision.min_active_frames.to_string());
        let dm = match self.decision.mode {
            DetectionMode::Monophonic => "monophonic",
            DetectionMode::Polyphonic => "polyphonic",
        };
        kv("decision.mode", dm.into());
        kv("decision.collar_s", self.collar_s.to_string());
        kv("sweep.grid", join(&self.sweep_grid));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 7;
        cfg.mode = ModeKind::FixedWeight;
        cfg.synth.test.clips = 12;
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_and_repeated_keys() {
        assert!(ExperimentConfig::parse("bogus = 1").is_err());
        assert!(ExperimentConfig::parse("data.holdout.clips = 1").is_err());
        assert!(ExperimentConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(ExperimentConfig::parse("seed = x").is_err());
    }

    #[test]
    fn grid_forms() {
        assert_eq!(grid("0.05:0.95:0.05").unwrap().len(), 19);
        assert_eq!(grid("0.3, 0.5").unwrap(), vec![0.3, 0.5]);
        assert!(grid("0.1:0.9:0").is_none());
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = ExperimentConfig::parse("# note\n\ntrain.epochs = 2\n").unwrap();
        assert_eq!(cfg.train.epochs, 2);
    }
}
