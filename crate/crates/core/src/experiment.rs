//! End-to-end runs over a dataset directory: train, evaluate, sweep.

use std::fmt::Write as _;
use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::features::FeatureParams;
use crate::fusion::FusionWeights;
use crate::metrics::{sweep_threshold, DecisionConfig, Sweep};
use crate::pipeline::{eval_items, evaluate, predict_files, prepare_split, scored_files, training_segments, Dataset, EvalReport, Source};
use crate::synth::{write_text, Split};
use crate::trainer::{train, TrainHistory};

/// Output of a training run.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub checkpoint: Checkpoint,
    pub best_epoch: usize,
    pub history: TrainHistory,
}

/// Trains on the dataset's train split, choosing the best epoch and the
/// fusion weights on its validation split.
pub fn train_run(cfg: &ExperimentConfig, ds: &Dataset, cache: Option<&Path>) -> Result<TrainRun> {
    cfg.validate()?;
    let model_cfg = cfg.model_config(ds.class_names.len());
    let tcfg = cfg.training(model_cfg.depth)?;
    let p = &cfg.features;
    let train_set = training_segments(&prepare_split(ds, Split::Train, p, cache)?, p)?;
    let val_set = eval_items(&prepare_split(ds, Split::Val, p, cache)?, p, model_cfg.unit())?;
    let out = train(&model_cfg, &train_set, &val_set, &tcfg)?;
    Ok(TrainRun {
        checkpoint: Checkpoint {
            model: out.best,
            fusion: out.best_fusion,
            features: p.clone(),
            class_names: ds.class_names.clone(),
        },
        best_epoch: out.best_epoch,
        history: out.history,
    })
}

/// Scores a checkpoint on one split, replacing its fusion weights when
/// `fusion` is given.
pub fn eval_run(
    ckpt: &Checkpoint,
    ds: &Dataset,
    split: Split,
    decision: &DecisionConfig,
    collar: f64,
    fusion: Option<&FusionWeights>,
    cache: Option<&Path>,
) -> Result<EvalReport> {
    check_classes(ckpt, ds)?;
    let p = &ckpt.features;
    let files = prepare_split(ds, split, p, cache)?;
    let preds = predict_files(&ckpt.model, fusion.unwrap_or(&ckpt.fusion), &files, p)?;
    evaluate(&preds, &ds.class_names, decision, p.hop_s, collar)
}

/// Sweeps the decision threshold of the fused output on one split.
pub fn sweep_run(
    ckpt: &Checkpoint,
    ds: &Dataset,
    split: Split,
    base: &DecisionConfig,
    grid: &[f64],
    collar: f64,
    cache: Option<&Path>,
) -> Result<Sweep> {
    check_classes(ckpt, ds)?;
    let p: &FeatureParams = &ckpt.features;
    let files = prepare_split(ds, split, p, cache)?;
    let preds = predict_files(&ckpt.model, &ckpt.fusion, &files, p)?;
    sweep_threshold(&scored_files(&preds, Source::Fused, p.hop_s), base, grid, collar)
}

fn check_classes(ckpt: &Checkpoint, ds: &Dataset) -> Result<()> {
    if !ckpt.class_names.is_empty() && ckpt.class_names != ds.class_names {
        return Err(Error::Config(format!(
            "checkpoint classes {:?} differ from dataset classes {:?}",
            ckpt.class_names, ds.class_names
        )));
    }
    Ok(())
}

/// `class,threshold,tp,fp,fn,precision,recall,er,f1,best`; `best` is 1 on
/// the row chosen for each class.
pub fn sweep_csv(sweep: &Sweep, class_names: &[String]) -> String {
    let mut out = String::from("class,threshold,tp,fp,fn,precision,recall,er,f1,best\n");
    for pt in &sweep.curve {
        let r = &pt.report;
        let c = r.counts;
        let best = u8::from(sweep.best[pt.class] == pt.threshold);
        let er = r.error_rate.map_or(String::new(), |e| e.to_string());
        writeln!(
            out,
            "{},{},{},{},{},{},{},{er},{},{best}",
            class_names[pt.class], pt.threshold, c.tp, c.fp, c.fn_, r.precision, r.recall, r.f1
        )
        .unwrap();
    }
    out
}

/// `class<TAB>threshold` per line, in class order.
pub fn thresholds_tsv(best: &[f64], class_names: &[String]) -> String {
    class_names.iter().zip(best).map(|(n, t)| format!("{n}\t{t}\n")).collect()
}

pub fn write_thresholds(path: &Path, best: &[f64], class_names: &[String]) -> Result<()> {
    write_text(path, &thresholds_tsv(best, class_names))
}

/// Reads a threshold file back into class order.
pub fn read_thresholds(path: &Path, class_names: &[String]) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = vec![None; class_names.len()];
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (name, t) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(path, format!("expected class<TAB>threshold, got {line:?}")))?;
        let c = class_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::format(path, format!("unknown class {name:?}")))?;
        let t: f64 = t.trim().parse().map_err(|_| Error::format(path, format!("bad threshold {t:?}")))?;
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::format(path, format!("threshold {t} outside (0, 1)")));
        }
        out[c] = Some(t);
    }
    out.into_iter()
        .zip(class_names)
        .map(|(t, n)| t.ok_or_else(|| Error::format(path, format!("no threshold for class {n}"))))
        .collect()
}
