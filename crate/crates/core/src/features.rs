//! Log-mel filterbank features, per-segment normalization and frame labels.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use adamd_numerics::Tensor;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::Waveform;
use crate::error::{Error, Result};

/// Added to mel energies before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;
/// Lower bound on the standard deviation used by [`normalize`].
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureParams {
    pub win_s: f64,
    pub hop_s: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub segment_len: usize,
    pub step_fraction: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            win_s: 0.04,
            hop_s: 0.02,
            n_fft: 2048,
            n_mels: 128,
            segment_len: 512,
            step_fraction: 0.5,
        }
    }
}

impl FeatureParams {
    /// Smaller mel and segment sizes used by the built-in synthetic experiments.
    pub fn desk() -> Self {
        FeatureParams {
            n_mels: 64,
            segment_len: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |r: &str| Err(Error::invalid("feature params", r.to_string()));
        if !(self.hop_s > 0.0 && self.win_s >= self.hop_s) {
            return bad("need win_s >= hop_s > 0");
        }
        if self.n_fft < 2 || self.n_mels == 0 || self.n_mels > self.n_fft / 2 + 1 {
            return bad("need 0 < n_mels <= n_fft/2 + 1");
        }
        if self.segment_len == 0 {
            return bad("segment_len must be positive");
        }
        if !(self.step_fraction > 0.0 && self.step_fraction <= 1.0) {
            return bad("step_fraction must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn win_samples(&self, sample_rate: u32) -> usize {
        (self.win_s * sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.hop_s * sample_rate as f64).round() as usize
    }

    pub fn segment_step(&self) -> usize {
        ((self.step_fraction * self.segment_len as f64).round() as usize).max(1)
    }

    pub fn frame_count(&self, samples: usize, sample_rate: u32) -> usize {
        let win = self.win_samples(sample_rate);
        if samples < win {
            0
        } else {
            1 + (samples - win) / self.hop_samples(sample_rate)
        }
    }

    /// Centre of frame `i` in seconds.
    pub fn frame_center(&self, i: usize) -> f64 {
        i as f64 * self.hop_s + self.win_s / 2.0
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()).collect()
}

/// Power spectrogram `[frames, n_fft/2 + 1]` of Hann-windowed frames.
///
/// Each windowed frame sits at the start of an `n_fft` buffer and the rest
/// is zero.
pub fn stft_power(w: &Waveform, p: &FeatureParams) -> Result<Tensor> {
    p.validate()?;
    let win = p.win_samples(w.sample_rate);
    let hop = p.hop_samples(w.sample_rate);
    if win == 0 || hop == 0 || win > p.n_fft {
        return Err(Error::invalid(
            "feature params",
            format!("window of {win} samples does not fit n_fft = {}", p.n_fft),
        ));
    }
    if w.len() < win {
        return Err(Error::invalid(
            "waveform",
            format!("{} samples is shorter than one {win}-sample window", w.len()),
        ));
    }
    let frames = p.frame_count(w.len(), w.sample_rate);
    let bins = p.n_fft / 2 + 1;
    let window = hann(win);
    let fft = FftPlanner::new().plan_fft_forward(p.n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); p.n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let start = f * hop;
        buf.fill(Complex::new(0.0, 0.0));
        for (i, (s, wv)) in w.samples[start..start + win].iter().zip(&window).enumerate() {
            buf[i].re = s * wv;
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        out.extend(buf[..bins].iter().map(|c| c.norm_sqr()));
    }
    Ok(Tensor::new(&[frames, bins], out)?)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Centre frequencies (Hz) of the `n_mels` triangular filters.
pub fn mel_centers(n_mels: usize, sample_rate: u32) -> Vec<f64> {
    mel_edges(n_mels, sample_rate)[1..=n_mels].to_vec()
}

fn mel_edges(n_mels: usize, sample_rate: u32) -> Vec<f64> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    (0..n_mels + 2).map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64)).collect()
}

/// Triangular mel filterbank `[n_mels, n_fft/2 + 1]` spanning 0 Hz to Nyquist.
pub fn mel_matrix(p: &FeatureParams, sample_rate: u32) -> Tensor {
    let bins = p.n_fft / 2 + 1;
    let edges = mel_edges(p.n_mels, sample_rate);
    let bin_hz = sample_rate as f64 / p.n_fft as f64;
    let mut data = vec![0.0; p.n_mels * bins];
    for m in 0..p.n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for b in 0..bins {
            let f = b as f64 * bin_hz;
            let rise = (f - lo) / (mid - lo);
            let fall = (hi - f) / (hi - mid);
            data[m * bins + b] = rise.min(fall).max(0.0);
        }
    }
    Tensor::new(&[p.n_mels, bins], data).expect("filterbank shape")
}

/// `ln(mel · power + 1e-10)` with shape `[frames, n_mels]`.
pub fn fbank(w: &Waveform, p: &FeatureParams) -> Result<Tensor> {
    let power = stft_power(w, p)?;
    let mel = mel_matrix(p, w.sample_rate);
    Ok(apply_filterbank(&power, &mel))
}

fn apply_filterbank(power: &Tensor, mel: &Tensor) -> Tensor {
    let (frames, bins) = (power.shape()[0], power.shape()[1]);
    let n_mels = mel.shape()[0];
    let mut out = Vec::with_capacity(frames * n_mels);
    for f in 0..frames {
        let spec = &power.data()[f * bins..(f + 1) * bins];
        for m in 0..n_mels {
            let row = &mel.data()[m * bins..(m + 1) * bins];
            let e: f64 = row.iter().zip(spec).map(|(a, b)| a * b).sum();
            out.push((e + LOG_FLOOR).ln());
        }
    }
    Tensor::new(&[frames, n_mels], out).expect("fbank shape")
}

/// A `τ × d` window of features with aligned `τ × C` frame labels.
///
/// Rows at or beyond `valid` are padding: zero features, zero labels, and
/// excluded from losses and statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub values: Tensor,
    pub labels: Tensor,
    pub valid: usize,
    pub hop_s: f64,
    pub origin_s: f64,
}

impl FeatureMatrix {
    pub fn frames(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn dims(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn classes(&self) -> usize {
        self.labels.shape()[1]
    }

    /// 1 for real frames and 0 for padding, one entry per frame.
    pub fn frame_mask(&self) -> Vec<f64> {
        (0..self.frames()).map(|i| if i < self.valid { 1.0 } else { 0.0 }).collect()
    }
}

/// Zero-mean, unit-variance scaling over every cell of the valid rows.
pub fn normalize(segment: &FeatureMatrix) -> FeatureMatrix {
    let d = segment.dims();
    let cells = &segment.values.data()[..segment.valid * d];
    let mut out = segment.clone();
    if cells.is_empty() {
        return out;
    }
    let n = cells.len() as f64;
    let mean = cells.iter().sum::<f64>() / n;
    let var = cells.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(STD_FLOOR);
    let data = out.values.data_mut();
    for v in &mut data[..segment.valid * d] {
        *v = (*v - mean) / std;
    }
    for v in &mut data[segment.valid * d..] {
        *v = 0.0;
    }
    out
}

/// One labelled event used to build frame targets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelSpan {
    pub onset: f64,
    pub offset: f64,
    pub class: usize,
}

/// Frame `i` is active for a class when its centre lies within `[onset, offset]`.
pub fn frame_labels(spans: &[LabelSpan], frames: usize, classes: usize, p: &FeatureParams) -> Tensor {
    let mut data = vec![0.0; frames * classes];
    for i in 0..frames {
        let c = p.frame_center(i);
        for s in spans {
            if s.class < classes && c >= s.onset && c <= s.offset {
                data[i * classes + s.class] = 1.0;
            }
        }
    }
    Tensor::new(&[frames, classes], data).expect("label shape")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentMode {
    /// Fixed-length windows of `segment_len` frames.
    Train,
    /// The whole file as one segment.
    Eval,
}

/// Cuts a file's features and labels into segments.
///
/// In training mode windows start every `segment_step()` frames; if the last
/// full window stops short of the end, a final window starting at the last
/// step offset is zero-padded to `segment_len` and masked.
pub fn segment(features: &Tensor, labels: &Tensor, p: &FeatureParams, mode: SegmentMode) -> Result<Vec<FeatureMatrix>> {
    let (frames, d) = match features.shape() {
        [t, d] => (*t, *d),
        s => return Err(Error::invalid("features", format!("expected [frames, dims], got {s:?}"))),
    };
    if frames == 0 {
        return Err(Error::invalid("features", "no frames to segment"));
    }
    if labels.shape().len() != 2 || labels.shape()[0] != frames {
        return Err(Error::invalid(
            "labels",
            format!("expected {frames} rows, got shape {:?}", labels.shape()),
        ));
    }
    let c = labels.shape()[1];
    let cut = |start: usize, len: usize| -> FeatureMatrix {
        let valid = len.min(frames - start);
        let mut values = vec![0.0; len * d];
        let mut labs = vec![0.0; len * c];
        values[..valid * d].copy_from_slice(&features.data()[start * d..(start + valid) * d]);
        labs[..valid * c].copy_from_slice(&labels.data()[start * c..(start + valid) * c]);
        FeatureMatrix {
            values: Tensor::new(&[len, d], values).expect("segment shape"),
            labels: Tensor::new(&[len, c], labs).expect("segment shape"),
            valid,
            hop_s: p.hop_s,
            origin_s: start as f64 * p.hop_s,
        }
    };
    match mode {
        SegmentMode::Eval => Ok(vec![cut(0, frames)]),
        SegmentMode::Train => {
            let tau = p.segment_len;
            let step = p.segment_step();
            let mut out = Vec::new();
            let mut start = 0;
            loop {
                out.push(cut(start, tau));
                if start + tau >= frames {
                    break;
                }
                start += step;
            }
            Ok(out)
        }
    }
}

const CACHE_MAGIC: &[u8; 4] = b"AFBK";
const CACHE_VERSION: u32 = 1;

/// Feature cache layout, all little-endian: magic `AFBK`, `u32` version,
/// `u32` rank, `u64` per dimension, then row-major `f64` values.
pub fn write_feature_cache(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(16 + t.len() * 8);
    bytes.extend_from_slice(CACHE_MAGIC);
    bytes.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        bytes.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

pub fn read_feature_cache(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut r = crate::binio::Reader::new(&bytes, path);
    if r.take(4)? != CACHE_MAGIC {
        return Err(Error::format(path, "not a feature cache (bad magic)"));
    }
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::format(path, format!("unsupported feature cache version {version}")));
    }
    let rank = r.u32()? as usize;
    let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let data = r.f64s(shape.iter().product())?;
    r.finish()?;
    Ok(Tensor::new(&shape, data)?)
}
