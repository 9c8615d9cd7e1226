//! Frame probabilities to events, and event-based scoring with an onset collar.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub const DEFAULT_COLLAR_S: f64 = 0.5;

/// An event with a class index; detections also carry their peak probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub class: usize,
    pub onset: f64,
    pub offset: f64,
    pub peak: f64,
}

impl Event {
    pub fn new(class: usize, onset: f64, offset: f64) -> Self {
        Event {
            class,
            onset,
            offset,
            peak: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetectionMode {
    /// At most one event per class: the first active run.
    Monophonic,
    /// Every active run is an event.
    Polyphonic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecisionConfig {
    /// One threshold per class; a single entry applies to every class.
    pub thresholds: Vec<f64>,
    pub filter_width: usize,
    pub min_active_frames: usize,
    pub mode: DetectionMode,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        DecisionConfig {
            thresholds: vec![0.5],
            filter_width: 3,
            min_active_frames: 1,
            mode: DetectionMode::Monophonic,
        }
    }
}

impl DecisionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() || self.thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::invalid("thresholds", format!("{:?} must lie in (0, 1)", self.thresholds)));
        }
        if self.filter_width % 2 == 0 {
            return Err(Error::invalid("filter width", format!("{} must be odd", self.filter_width)));
        }
        if self.min_active_frames == 0 {
            return Err(Error::invalid("min active frames", "must be at least 1"));
        }
        Ok(())
    }

    pub fn threshold(&self, class: usize) -> f64 {
        self.thresholds.get(class).copied().unwrap_or(self.thresholds[0])
    }
}

/// Moving average of odd `width`, truncated at the edges.
pub fn mean_filter(p: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    (0..p.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(p.len());
            p[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Active runs of one class's (already filtered) probabilities. Onset is the
/// first active frame times `hop_s`, offset the frame after the run.
pub fn extract_events(p: &[f64], class: usize, threshold: f64, hop_s: f64, min_active: usize, mode: DetectionMode) -> Vec<Event> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < p.len() {
        if p[i] < threshold {
            i += 1;
            continue;
        }
        let start = i;
        let mut peak = p[i];
        while i < p.len() && p[i] >= threshold {
            peak = peak.max(p[i]);
            i += 1;
        }
        if i - start >= min_active {
            out.push(Event {
                class,
                onset: start as f64 * hop_s,
                offset: i as f64 * hop_s,
                peak,
            });
            if mode == DetectionMode::Monophonic {
                break;
            }
        }
    }
    out
}

/// Filters and thresholds a `[frames, C]` row-major probability matrix.
pub fn binarize_and_extract(p: &[f64], classes: usize, cfg: &DecisionConfig, hop_s: f64) -> Result<Vec<Event>> {
    cfg.validate()?;
    if classes == 0 || p.len() % classes != 0 {
        return Err(Error::invalid("probabilities", format!("{} values for {classes} classes", p.len())));
    }
    let mut out = Vec::new();
    for c in 0..classes {
        let column: Vec<f64> = p.iter().skip(c).step_by(classes).copied().collect();
        let smooth = if cfg.filter_width > 1 {
            mean_filter(&column, cfg.filter_width)
        } else {
            column
        };
        out.extend(extract_events(&smooth, c, cfg.threshold(c), hop_s, cfg.min_active_frames, cfg.mode));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// One-to-one matching of detections to references of the same class with
/// `|Δonset| <= collar`. Returns `(reference, detection)` index pairs.
///
/// References are taken in onset order and each claims the earliest
/// unmatched detection inside its collar. Because every collar has the same
/// width, this yields a maximum matching.
pub fn match_pairs(reference: &[Event], detected: &[Event], collar: f64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    let mut by_class: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, e) in reference.iter().enumerate() {
        by_class.entry(e.class).or_default().0.push(i);
    }
    for (j, e) in detected.iter().enumerate() {
        by_class.entry(e.class).or_default().1.push(j);
    }
    for (refs, mut dets) in by_class.into_values() {
        let mut refs = refs;
        refs.sort_by(|&a, &b| reference[a].onset.total_cmp(&reference[b].onset).then(a.cmp(&b)));
        dets.sort_by(|&a, &b| detected[a].onset.total_cmp(&detected[b].onset).then(a.cmp(&b)));
        let mut used = vec![false; dets.len()];
        for r in refs {
            let onset = reference[r].onset;
            let hit = dets
                .iter()
                .enumerate()
                .find(|&(k, &d)| !used[k] && (detected[d].onset - onset).abs() <= collar);
            if let Some((k, &d)) = hit {
                used[k] = true;
                pairs.push((r, d));
            }
        }
    }
    pairs
}

pub fn match_events(reference: &[Event], detected: &[Event], collar: f64) -> Counts {
    let tp = match_pairs(reference, detected, collar).len();
    Counts {
        tp,
        fp: detected.len() - tp,
        fn_: reference.len() - tp,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    /// `None` when there are no reference events.
    pub error_rate: Option<f64>,
    pub f1: f64,
}

pub fn compute_metrics(c: Counts) -> MetricsReport {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let n = c.tp + c.fn_;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    MetricsReport {
        counts: c,
        precision,
        recall,
        error_rate: (n > 0).then(|| (c.fn_ + c.fp) as f64 / n as f64),
        f1,
    }
}

/// Reference and probability data of one file.
#[derive(Clone, Debug)]
pub struct ScoredFile {
    pub reference: Vec<Event>,
    /// Fused `[frames, C]` probabilities, row-major.
    pub probs: Vec<f64>,
    pub classes: usize,
    pub hop_s: f64,
}

/// Per-class counts over a set of files.
pub fn score_files(files: &[ScoredFile], cfg: &DecisionConfig, collar: f64) -> Result<Vec<Counts>> {
    let classes = files.first().map_or(0, |f| f.classes);
    let mut per_class = vec![Counts::default(); classes];
    for f in files {
        if f.classes != classes {
            return Err(Error::invalid("scored files", "class counts differ between files"));
        }
        let det = binarize_and_extract(&f.probs, f.classes, cfg, f.hop_s)?;
        for (c, slot) in per_class.iter_mut().enumerate() {
            let r: Vec<Event> = f.reference.iter().filter(|e| e.class == c).cloned().collect();
            let d: Vec<Event> = det.iter().filter(|e| e.class == c).cloned().collect();
            *slot += match_events(&r, &d, collar);
        }
    }
    Ok(per_class)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub class: usize,
    pub threshold: f64,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub curve: Vec<SweepPoint>,
    /// Per-class threshold with the lowest error rate. Ties go to the
    /// threshold nearest the base config's, then to the lower one.
    pub best: Vec<f64>,
}

/// `0.05, 0.10, ..., 0.95`.
pub fn default_grid() -> Vec<f64> {
    (1..20).map(|i| (5 * i) as f64 / 100.0).collect()
}

pub fn sweep_threshold(files: &[ScoredFile], base: &DecisionConfig, grid: &[f64], collar: f64) -> Result<Sweep> {
    if grid.is_empty() {
        return Err(Error::invalid("threshold grid", "empty"));
    }
    let classes = files.first().map_or(0, |f| f.classes);
    let mut curve = Vec::new();
    let mut best: Vec<Option<(f64, f64)>> = vec![None; classes];
    for &t in grid {
        let cfg = DecisionConfig {
            thresholds: vec![t],
            ..base.clone()
        };
        for (c, counts) in score_files(files, &cfg, collar)?.into_iter().enumerate() {
            let report = compute_metrics(counts);
            let er = report.error_rate.unwrap_or(f64::INFINITY);
            let gap = |x: f64| (x - base.threshold(c)).abs();
            let better = match best[c] {
                None => true,
                Some((b_er, b_t)) => er < b_er || (er == b_er && (gap(t) < gap(b_t) || (gap(t) == gap(b_t) && t < b_t))),
            };
            if better {
                best[c] = Some((er, t));
            }
            curve.push(SweepPoint {
                class: c,
                threshold: t,
                report,
            });
        }
    }
    curve.sort_by(|a, b| a.class.cmp(&b.class).then(a.threshold.total_cmp(&b.threshold)));
    Ok(Sweep {
        curve,
        best: best.into_iter().map(|b| b.map_or(grid[0], |(_, t)| t)).collect(),
    })
}

pub const SHIFT_BINS: usize = 24;
pub const SHIFT_RANGE_S: f64 = 0.48;

/// Histogram bin of a signed onset shift: bins are right-closed, `(a, b]`,
/// and shifts beyond the range land in the edge bins.
pub fn shift_bin(shift: f64) -> usize {
    let width = 2.0 * SHIFT_RANGE_S / SHIFT_BINS as f64;
    let raw = ((shift + SHIFT_RANGE_S) / width).ceil() as i64 - 1;
    raw.clamp(0, SHIFT_BINS as i64 - 1) as usize
}

/// Lower and upper edges of every shift bin.
pub fn shift_bin_edges() -> Vec<(f64, f64)> {
    let width = 2.0 * SHIFT_RANGE_S / SHIFT_BINS as f64;
    (0..SHIFT_BINS)
        .map(|i| (-SHIFT_RANGE_S + i as f64 * width, -SHIFT_RANGE_S + (i + 1) as f64 * width))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ErrorBreakdown {
    /// References of a class the file has no detection of at all.
    pub missing: usize,
    /// Detections of a class the file has no reference of.
    pub false_alarm: usize,
    /// References with same-class detections, none inside the collar.
    pub shifted: usize,
    /// Signed onset shift (detection minus reference) of matched pairs, plus
    /// the nearest detection of each shifted reference.
    pub histogram: Vec<usize>,
}

impl Default for ErrorBreakdown {
    fn default() -> Self {
        ErrorBreakdown {
            missing: 0,
            false_alarm: 0,
            shifted: 0,
            histogram: vec![0; SHIFT_BINS],
        }
    }
}

impl ErrorBreakdown {
    /// Adds one file's events.
    pub fn add(&mut self, reference: &[Event], detected: &[Event], collar: f64) {
        let pairs = match_pairs(reference, detected, collar);
        let mut matched = vec![false; reference.len()];
        for &(r, d) in &pairs {
            matched[r] = true;
            self.histogram[shift_bin(detected[d].onset - reference[r].onset)] += 1;
        }
        for (r, e) in reference.iter().enumerate() {
            if matched[r] {
                continue;
            }
            let nearest = detected
                .iter()
                .filter(|d| d.class == e.class)
                .map(|d| d.onset - e.onset)
                .min_by(|a, b| a.abs().total_cmp(&b.abs()));
            match nearest {
                Some(shift) => {
                    self.shifted += 1;
                    self.histogram[shift_bin(shift)] += 1;
                }
                None => self.missing += 1,
            }
        }
        self.false_alarm += detected.iter().filter(|d| !reference.iter().any(|r| r.class == d.class)).count();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_filter_examples() {
        let out = mean_filter(&[0.0, 1.0, 0.0], 3);
        assert_eq!(out, vec![0.5, 1.0 / 3.0, 0.5]);
        assert!(mean_filter(&[0.4; 5], 3).iter().all(|v| (v - 0.4).abs() < 1e-15));
        assert_eq!(mean_filter(&[0.7], 3), vec![0.7]);
    }

    #[test]
    fn extraction_examples() {
        let hop = 0.02;
        assert!(extract_events(&[0.1, 0.2], 0, 0.5, hop, 1, DetectionMode::Monophonic).is_empty());
        let ev = extract_events(&[0.1, 0.6, 0.7, 0.2], 0, 0.5, hop, 1, DetectionMode::Monophonic);
        assert_eq!(ev.len(), 1);
        assert!((ev[0].onset - 0.02).abs() < 1e-12 && (ev[0].offset - 0.06).abs() < 1e-12);
        assert_eq!(ev[0].peak, 0.7);
        let two = [0.9, 0.1, 0.9, 0.9];
        assert_eq!(extract_events(&two, 0, 0.5, hop, 1, DetectionMode::Polyphonic).len(), 2);
        let mono = extract_events(&two, 0, 0.5, hop, 1, DetectionMode::Monophonic);
        assert_eq!(mono.len(), 1);
        assert_eq!(mono[0].onset, 0.0);
        // A run shorter than the minimum is skipped, not reported.
        let mono = extract_events(&two, 0, 0.5, hop, 2, DetectionMode::Monophonic);
        assert!((mono[0].onset - 0.04).abs() < 1e-12);
    }

    #[test]
    fn collar_examples() {
        let r = [Event::new(0, 1.0, 2.0)];
        let c = match_events(&r, &[Event::new(0, 1.2, 2.0)], 0.5);
        assert_eq!(c, Counts { tp: 1, fp: 0, fn_: 0 });
        let c = match_events(&r, &[Event::new(0, 1.6, 2.0)], 0.5);
        assert_eq!(c, Counts { tp: 0, fp: 1, fn_: 1 });
        let c = match_events(&r, &[Event::new(1, 1.0, 2.0)], 0.5);
        assert_eq!(c, Counts { tp: 0, fp: 1, fn_: 1 });
    }

    #[test]
    fn nearest_first_would_lose_a_match() {
        // Taking the nearest detection for the first reference strands the second one.
        let r = [Event::new(0, 0.0, 1.0), Event::new(0, 0.45, 1.0)];
        let d = [Event::new(0, 0.3, 1.0), Event::new(0, -0.4, 1.0)];
        assert_eq!(match_events(&r, &d, 0.5).tp, 2);
    }

    #[test]
    fn metric_examples() {
        let m = compute_metrics(Counts { tp: 1, fp: 0, fn_: 0 });
        assert_eq!((m.error_rate, m.f1), (Some(0.0), 1.0));
        let m = compute_metrics(Counts { tp: 0, fp: 1, fn_: 1 });
        assert_eq!((m.error_rate, m.f1), (Some(2.0), 0.0));
        let m = compute_metrics(Counts { tp: 1, fp: 1, fn_: 0 });
        assert_eq!((m.precision, m.recall, m.error_rate), (0.5, 1.0, Some(1.0)));
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(compute_metrics(Counts { tp: 0, fp: 3, fn_: 0 }).error_rate, None);
    }

    #[test]
    fn shift_bins() {
        let edges = shift_bin_edges();
        let b = shift_bin(0.1);
        assert!((edges[b].0 - 0.08).abs() < 1e-12 && (edges[b].1 - 0.12).abs() < 1e-12);
        assert_eq!(shift_bin(0.0), 11);
        assert_eq!(shift_bin(-1.0), 0);
        assert_eq!(shift_bin(1.0), 23);
    }

    #[test]
    fn breakdown_counts() {
        let refs: Vec<Event> = (0..5).map(|i| Event::new(0, i as f64, i as f64 + 0.5)).collect();
        let mut b = ErrorBreakdown::default();
        b.add(&refs, &[], 0.5);
        assert_eq!(b.missing, 5);
        let mut b = ErrorBreakdown::default();
        b.add(&refs, &refs, 0.5);
        assert_eq!((b.missing, b.false_alarm, b.shifted), (0, 0, 0));
        assert_eq!(b.histogram[11], 5);
        let mut b = ErrorBreakdown::default();
        b.add(&[], &[Event::new(0, 1.0, 2.0)], 0.5);
        assert_eq!(b.false_alarm, 1);
    }
}
