//! Dataset loading, feature preparation and evaluation runs.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use adamd_numerics::Tensor;

use crate::audio::read_wav;
use crate::error::{Error, Result};
use crate::features::{
    fbank, frame_labels, normalize, read_feature_cache, segment, write_feature_cache, FeatureMatrix, FeatureParams, LabelSpan, SegmentMode,
};
use crate::fusion::{fuse, FusionWeights};
use crate::metrics::{
    binarize_and_extract, compute_metrics, match_events, shift_bin_edges, Counts, DecisionConfig, ErrorBreakdown, Event, MetricsReport, ScoredFile,
};
use crate::model::Model;
use crate::synth::{parse_annotations, parse_manifest, Split, AUDIO_DIR, CLASSES_FILE, MANIFEST_FILE, META_FILE};
use crate::trainer::{predict_item, EvalItem};

#[derive(Clone, Debug)]
pub struct FileEntry {
    pub file: String,
    pub split: Split,
    pub reference: Vec<Event>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub class_names: Vec<String>,
    pub files: Vec<FileEntry>,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl Dataset {
    pub fn load(dir: impl AsRef<Path>) -> Result<Dataset> {
        let dir = dir.as_ref().to_path_buf();
        let class_names: Vec<String> = read_text(&dir.join(CLASSES_FILE))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        if class_names.is_empty() {
            return Err(Error::format(dir.join(CLASSES_FILE), "no class names"));
        }
        let index: HashMap<&str, usize> = class_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut refs: HashMap<String, Vec<Event>> = HashMap::new();
        for rec in parse_annotations(&read_text(&dir.join(META_FILE))?)? {
            let list = refs.entry(rec.file.clone()).or_default();
            if let Some((on, off, label)) = rec.event {
                let c = *index
                    .get(label.as_str())
                    .ok_or_else(|| Error::format(dir.join(META_FILE), format!("unknown class {label:?}")))?;
                list.push(Event::new(c, on, off));
            }
        }
        let files = parse_manifest(&read_text(&dir.join(MANIFEST_FILE))?)?
            .into_iter()
            .map(|(file, split)| {
                let reference = refs
                    .remove(&file)
                    .ok_or_else(|| Error::format(dir.join(META_FILE), format!("no annotation rows for {file}")))?;
                Ok(FileEntry { file, split, reference })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { dir, class_names, files })
    }

    pub fn split(&self, split: Split) -> Vec<&FileEntry> {
        self.files.iter().filter(|f| f.split == split).collect()
    }

    pub fn audio_path(&self, file: &str) -> PathBuf {
        self.dir.join(AUDIO_DIR).join(file)
    }
}

/// Raw log-mel features and frame labels of one file.
#[derive(Clone, Debug)]
pub struct PreparedFile {
    pub file: String,
    pub features: Tensor,
    pub labels: Tensor,
    pub reference: Vec<Event>,
}

fn cache_name(file: &str, p: &FeatureParams, sample_rate: u32) -> String {
    format!("{file}.{}-{}-{}-{}-{sample_rate}.afbk", p.win_s, p.hop_s, p.n_fft, p.n_mels)
}

/// Computes features of every file of a split. With `cache_dir`, features
/// are read from and written to a cache keyed by file and feature settings.
pub fn prepare_split(ds: &Dataset, split: Split, p: &FeatureParams, cache_dir: Option<&Path>) -> Result<Vec<PreparedFile>> {
    let classes = ds.class_names.len();
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    ds.split(split)
        .into_iter()
        .map(|entry| {
            let wave = read_wav(ds.audio_path(&entry.file))?;
            let cached = cache_dir.map(|d| d.join(cache_name(&entry.file, p, wave.sample_rate)));
            let features = match &cached {
                Some(path) if path.exists() => read_feature_cache(path)?,
                _ => {
                    let f = fbank(&wave, p)?;
                    if let Some(path) = &cached {
                        write_feature_cache(path, &f)?;
                    }
                    f
                }
            };
            let spans: Vec<LabelSpan> = entry
                .reference
                .iter()
                .map(|e| LabelSpan {
                    onset: e.onset,
                    offset: e.offset,
                    class: e.class,
                })
                .collect();
            let labels = frame_labels(&spans, features.shape()[0], classes, p);
            Ok(PreparedFile {
                file: entry.file.clone(),
                features,
                labels,
                reference: entry.reference.clone(),
            })
        })
        .collect()
}

/// Normalized fixed-length training segments of every file.
pub fn training_segments(files: &[PreparedFile], p: &FeatureParams) -> Result<Vec<FeatureMatrix>> {
    let mut out = Vec::new();
    for f in files {
        for s in segment(&f.features, &f.labels, p, SegmentMode::Train)? {
            out.push(normalize(&s));
        }
    }
    Ok(out)
}

/// Normalizes a whole file, then repeats its last frame until the length is
/// a multiple of `unit`.
pub fn eval_item(f: &PreparedFile, p: &FeatureParams, unit: usize) -> Result<EvalItem> {
    let whole = segment(&f.features, &f.labels, p, SegmentMode::Eval)?.remove(0);
    let norm = normalize(&whole);
    let (t, d) = (norm.frames(), norm.dims());
    let padded_len = t.div_ceil(unit).max(2) * unit;
    let mut data = norm.values.into_data();
    let last = data[(t - 1) * d..t * d].to_vec();
    for _ in t..padded_len {
        data.extend_from_slice(&last);
    }
    Ok(EvalItem {
        file: f.file.clone(),
        features: Tensor::new(&[padded_len, d], data)?,
        labels: f.labels.clone(),
        valid: t,
    })
}

pub fn eval_items(files: &[PreparedFile], p: &FeatureParams, unit: usize) -> Result<Vec<EvalItem>> {
    files.iter().map(|f| eval_item(f, p, unit)).collect()
}

/// Per-scale and fused probabilities of one file.
#[derive(Clone, Debug)]
pub struct FilePrediction {
    pub file: String,
    pub reference: Vec<Event>,
    pub scales: Vec<Tensor>,
    pub fused: Tensor,
}

pub fn predict_files(model: &Model, fusion: &FusionWeights, files: &[PreparedFile], p: &FeatureParams) -> Result<Vec<FilePrediction>> {
    let unit = model.config.unit();
    files
        .iter()
        .map(|f| {
            let item = eval_item(f, p, unit)?;
            let scales = predict_item(model, &item)?;
            let fused = fuse(&scales, fusion)?;
            Ok(FilePrediction {
                file: f.file.clone(),
                reference: f.reference.clone(),
                scales,
                fused,
            })
        })
        .collect()
}

/// Which probabilities to score: one scale alone or the fused output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Scale(usize),
    Fused,
}

pub fn scored_files(preds: &[FilePrediction], source: Source, hop_s: f64) -> Vec<ScoredFile> {
    preds
        .iter()
        .map(|p| {
            let t = match source {
                Source::Scale(k) => &p.scales[k],
                Source::Fused => &p.fused,
            };
            ScoredFile {
                reference: p.reference.clone(),
                probs: t.data().to_vec(),
                classes: t.shape()[1],
                hop_s,
            }
        })
        .collect()
}

/// Scores of one output: per class and pooled over classes.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceReport {
    pub source: Source,
    pub per_class: Vec<MetricsReport>,
    pub overall: MetricsReport,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    /// K per-scale rows followed by the fused row.
    pub rows: Vec<SourceReport>,
    pub breakdown: Vec<ErrorBreakdown>,
    pub detections: Vec<(String, Vec<Event>)>,
}

impl EvalReport {
    pub fn fused(&self) -> &SourceReport {
        self.rows.last().expect("fused row")
    }

    /// Mean of the per-class error rates of the fused output.
    pub fn fused_er(&self) -> f64 {
        mean_er(&self.fused().per_class)
    }

    pub fn scale_er(&self, k: usize) -> f64 {
        mean_er(&self.rows[k].per_class)
    }
}

/// Mean error rate over classes that have reference events.
pub fn mean_er(reports: &[MetricsReport]) -> f64 {
    let ers: Vec<f64> = reports.iter().filter_map(|r| r.error_rate).collect();
    if ers.is_empty() {
        f64::NAN
    } else {
        ers.iter().sum::<f64>() / ers.len() as f64
    }
}

fn source_report(
    preds: &[FilePrediction],
    source: Source,
    cfg: &DecisionConfig,
    hop_s: f64,
    collar: f64,
) -> Result<(SourceReport, Vec<(String, Vec<Event>)>)> {
    let classes = preds.first().map_or(0, |p| p.fused.shape()[1]);
    let mut per_class = vec![Counts::default(); classes];
    let mut detections = Vec::with_capacity(preds.len());
    for (p, f) in preds.iter().zip(scored_files(preds, source, hop_s)) {
        let det = binarize_and_extract(&f.probs, f.classes, cfg, hop_s)?;
        for (c, slot) in per_class.iter_mut().enumerate() {
            let r: Vec<Event> = f.reference.iter().filter(|e| e.class == c).cloned().collect();
            let d: Vec<Event> = det.iter().filter(|e| e.class == c).cloned().collect();
            *slot += match_events(&r, &d, collar);
        }
        detections.push((p.file.clone(), det));
    }
    let mut pooled = Counts::default();
    for c in &per_class {
        pooled += *c;
    }
    Ok((
        SourceReport {
            source,
            per_class: per_class.into_iter().map(compute_metrics).collect(),
            overall: compute_metrics(pooled),
        },
        detections,
    ))
}

pub fn evaluate(preds: &[FilePrediction], class_names: &[String], cfg: &DecisionConfig, hop_s: f64, collar: f64) -> Result<EvalReport> {
    let depth = preds.first().map_or(0, |p| p.scales.len());
    let mut rows = Vec::with_capacity(depth + 1);
    for k in 0..depth {
        rows.push(source_report(preds, Source::Scale(k), cfg, hop_s, collar)?.0);
    }
    let (fused, detections) = source_report(preds, Source::Fused, cfg, hop_s, collar)?;
    rows.push(fused);
    let mut breakdown = vec![ErrorBreakdown::default(); class_names.len()];
    for (p, (_, det)) in preds.iter().zip(&detections) {
        for (c, b) in breakdown.iter_mut().enumerate() {
            let r: Vec<Event> = p.reference.iter().filter(|e| e.class == c).cloned().collect();
            let d: Vec<Event> = det.iter().filter(|e| e.class == c).cloned().collect();
            b.add(&r, &d, collar);
        }
    }
    Ok(EvalReport {
        class_names: class_names.to_vec(),
        rows,
        breakdown,
        detections,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

/// `source,class,tp,fp,fn,precision,recall,er,f1`; class `all` pools counts.
pub fn metrics_csv(report: &EvalReport) -> String {
    let mut out = String::from("source,class,tp,fp,fn,precision,recall,er,f1\n");
    for row in &report.rows {
        let source = match row.source {
            Source::Scale(k) => format!("scale_{}", k + 1),
            Source::Fused => "fused".to_string(),
        };
        let named = report.class_names.iter().map(String::as_str).zip(&row.per_class);
        for (name, m) in named.chain(std::iter::once(("all", &row.overall))) {
            let c = m.counts;
            writeln!(
                out,
                "{source},{name},{},{},{},{},{},{},{}",
                c.tp,
                c.fp,
                c.fn_,
                m.precision,
                m.recall,
                opt(m.error_rate),
                m.f1
            )
            .unwrap();
        }
    }
    out
}

/// Error types per class and the onset-shift histogram in long form.
pub fn breakdown_csv(report: &EvalReport) -> String {
    let mut out = String::from("class,kind,bin_lo,bin_hi,count\n");
    let edges = shift_bin_edges();
    for (name, b) in report.class_names.iter().zip(&report.breakdown) {
        writeln!(out, "{name},missing,,,{}", b.missing).unwrap();
        writeln!(out, "{name},false_alarm,,,{}", b.false_alarm).unwrap();
        writeln!(out, "{name},shifted,,,{}", b.shifted).unwrap();
        for ((lo, hi), n) in edges.iter().zip(&b.histogram) {
            writeln!(out, "{name},shift,{lo:.2},{hi:.2},{n}").unwrap();
        }
    }
    out
}

/// Detected events in the annotation TSV layout.
pub fn detections_tsv(report: &EvalReport) -> String {
    let mut out = String::new();
    for (file, det) in &report.detections {
        if det.is_empty() {
            writeln!(out, "{file}\t\t\tnone").unwrap();
        }
        for e in det {
            writeln!(out, "{file}\t{:.6}\t{:.6}\t{}", e.onset, e.offset, report.class_names[e.class]).unwrap();
        }
    }
    out
}
