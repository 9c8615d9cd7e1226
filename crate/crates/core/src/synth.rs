//! Synthetic event, background and mixture generation.
//!
//! Event recipes follow a two-way taxonomy of acoustic events: whether the
//! energy dies away before the event ends (vanishing tail) and whether the
//! spectral content stays the same over the event (consistent features).

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::{rms, write_wav, Waveform};
use crate::error::{Error, Result};

/// Silent-background threshold for [`mix`].
pub const SILENCE_RMS: f64 = 1e-9;
/// Mixtures whose peak exceeds this are scaled down to it.
pub const PEAK_LIMIT: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tail {
    Vanishing,
    NonVanishing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Consistency {
    Consistent,
    Inconsistent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventArchetype {
    /// Pitch-warbling harmonic sequence with a flat envelope.
    Type1,
    /// Harmonic tone with exponential decay.
    Type2,
    /// Band-limited noise burst with exponential decay.
    Type3,
    /// Sustained multi-harmonic tone with a flat envelope.
    Type4,
}

impl EventArchetype {
    pub const ALL: [EventArchetype; 4] = [Self::Type1, Self::Type2, Self::Type3, Self::Type4];

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Self::Type1),
            2 => Ok(Self::Type2),
            3 => Ok(Self::Type3),
            4 => Ok(Self::Type4),
            _ => Err(Error::invalid("event archetype", format!("unknown archetype {id}, expected 1-4"))),
        }
    }

    pub fn id(self) -> u8 {
        match self {
            Self::Type1 => 1,
            Self::Type2 => 2,
            Self::Type3 => 3,
            Self::Type4 => 4,
        }
    }

    pub fn tail(self) -> Tail {
        match self {
            Self::Type1 | Self::Type4 => Tail::NonVanishing,
            Self::Type2 | Self::Type3 => Tail::Vanishing,
        }
    }

    pub fn consistency(self) -> Consistency {
        match self {
            Self::Type2 | Self::Type4 => Consistency::Consistent,
            Self::Type1 | Self::Type3 => Consistency::Inconsistent,
        }
    }
}

/// Signal parameters of one event class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassParams {
    pub name: String,
    pub archetype: EventArchetype,
    /// Frequency range in Hz: fundamentals for tonal recipes, the pass band
    /// for noise bursts.
    pub f_lo: f64,
    pub f_hi: f64,
    /// Event durations are drawn uniformly from this range, in seconds.
    pub min_dur: f64,
    pub max_dur: f64,
    /// Envelope decay rate in 1/s for vanishing archetypes.
    pub decay: f64,
}

impl ClassParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.f_lo > 0.0 && self.f_hi > self.f_lo && self.min_dur > 0.0 && self.max_dur >= self.min_dur && self.decay >= 0.0;
        if !ok || self.name.is_empty() || self.name == "none" || self.name.contains(char::is_whitespace) {
            return Err(Error::invalid("class params", format!("{self:?}")));
        }
        Ok(())
    }
}

/// The three default classes: a warbling cry, a ringing break and a noisy shot.
pub fn default_classes() -> Vec<ClassParams> {
    vec![
        ClassParams {
            name: "babycry".into(),
            archetype: EventArchetype::Type1,
            f_lo: 350.0,
            f_hi: 600.0,
            min_dur: 1.0,
            max_dur: 2.5,
            decay: 0.0,
        },
        ClassParams {
            name: "glassbreak".into(),
            archetype: EventArchetype::Type2,
            f_lo: 1800.0,
            f_hi: 2600.0,
            min_dur: 0.5,
            max_dur: 1.2,
            decay: 5.0,
        },
        ClassParams {
            name: "gunshot".into(),
            archetype: EventArchetype::Type3,
            f_lo: 150.0,
            f_hi: 1500.0,
            min_dur: 0.3,
            max_dur: 0.6,
            decay: 10.0,
        },
    ]
}

/// Linear fade length at event edges, in seconds.
const FADE_S: f64 = 0.005;

fn fade_edges(samples: &mut [f64], sample_rate: u32) {
    let n = samples.len();
    let fade = ((FADE_S * sample_rate as f64) as usize).min(n / 2);
    for i in 0..fade {
        let g = i as f64 / fade as f64;
        samples[i] *= g;
        samples[n - 1 - i] *= g;
    }
}

fn harmonic(phase: f64, partials: usize) -> f64 {
    (1..=partials).map(|h| (h as f64 * phase).sin() / h as f64).sum()
}

/// Renders one event. Output RMS is normalized to 0.1 before the envelope
/// decay is applied; [`mix`] rescales it anyway.
pub fn synth_event(archetype: EventArchetype, class: &ClassParams, duration_s: f64, sample_rate: u32, seed: u64) -> Result<Waveform> {
    class.validate()?;
    if !(duration_s > 0.0) || sample_rate == 0 {
        return Err(Error::invalid("event", format!("duration {duration_s} s at {sample_rate} Hz")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    let n = ((duration_s * sr).round() as usize).max(1);
    let nyquist = sr / 2.0;
    let f_hi = class.f_hi.min(nyquist * 0.95);
    let f_lo = class.f_lo.min(f_hi * 0.99);
    let mut out = vec![0.0; n];
    match archetype {
        EventArchetype::Type1 => {
            let mut phase = 0.0;
            let mut i = 0;
            while i < n {
                let syllable = ((rng.random_range(0.15..0.35) * sr) as usize).max(1);
                let f0 = rng.random_range(f_lo..f_hi);
                let rate = rng.random_range(4.0..8.0);
                let depth = rng.random_range(0.03..0.08);
                for j in 0..syllable.min(n - i) {
                    let t = j as f64 / sr;
                    let f = f0 * (1.0 + depth * (2.0 * PI * rate * t).sin());
                    phase += 2.0 * PI * f / sr;
                    out[i + j] = harmonic(phase, 4);
                }
                i += syllable;
            }
        }
        EventArchetype::Type2 | EventArchetype::Type4 => {
            let f0 = rng.random_range(f_lo..f_hi);
            let partials = if archetype == EventArchetype::Type2 { 3 } else { 5 };
            let partials = partials.min((nyquist / f0) as usize).max(1);
            for (i, s) in out.iter_mut().enumerate() {
                *s = harmonic(2.0 * PI * f0 * i as f64 / sr, partials);
            }
        }
        EventArchetype::Type3 => {
            let lo = rng.random_range(f_lo..(f_lo + f_hi) / 2.0);
            let hi = rng.random_range((f_lo + f_hi) / 2.0..f_hi);
            let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            out = spectral_shape(&noise, |f| if f >= lo / sr && f <= hi / sr { 1.0 } else { 0.0 });
        }
    }
    let level = rms(&out);
    if level > 0.0 {
        out.iter_mut().for_each(|s| *s *= 0.1 / level);
    }
    if archetype.tail() == Tail::Vanishing {
        for (i, s) in out.iter_mut().enumerate() {
            *s *= (-class.decay * i as f64 / sr).exp();
        }
    }
    fade_edges(&mut out, sample_rate);
    Waveform::new(out, sample_rate)
}

/// Multiplies the spectrum of `x` by `gain(f)`, `f` in cycles per sample.
fn spectral_shape(x: &[f64], gain: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = x.len();
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 / n as f64;
        *c *= gain(f);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Coloured noise with power falling as `1/f^exponent`, scaled to `level` RMS.
pub fn background(len: usize, sample_rate: u32, exponent: f64, level: f64, seed: u64) -> Result<Waveform> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
    let floor = 20.0 / sample_rate as f64;
    let mut out = spectral_shape(&white, |f| if f == 0.0 { 0.0 } else { f.max(floor).powf(-exponent / 2.0) });
    let r = rms(&out);
    if r > 0.0 {
        out.iter_mut().for_each(|s| *s *= level / r);
    }
    Waveform::new(out, sample_rate)
}

/// A mixture and where its event sits.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixed {
    pub audio: Waveform,
    pub onset_s: f64,
    pub offset_s: f64,
    /// Gain applied to the event before addition (before any peak limiting).
    pub event_gain: f64,
}

/// Adds `event` to `background` at `onset_s` so that the event-to-background
/// RMS ratio over the event's support is `ebr_db`. The mixture is scaled
/// down as a whole if its peak would exceed [`PEAK_LIMIT`].
pub fn mix(background: &Waveform, event: &Waveform, ebr_db: f64, onset_s: f64) -> Result<Mixed> {
    if background.sample_rate != event.sample_rate {
        return Err(Error::invalid(
            "mix",
            format!("sample rates differ: {} vs {}", background.sample_rate, event.sample_rate),
        ));
    }
    let sr = background.sample_rate as f64;
    if !(onset_s >= 0.0) || !ebr_db.is_finite() {
        return Err(Error::invalid("mix", format!("onset {onset_s} s, EBR {ebr_db} dB")));
    }
    let start = (onset_s * sr).round() as usize;
    let end = start + event.len();
    if event.is_empty() || end > background.len() {
        return Err(Error::invalid(
            "mix",
            format!(
                "event of {} samples at sample {start} does not fit a {}-sample background",
                event.len(),
                background.len()
            ),
        ));
    }
    let bg_rms = rms(&background.samples[start..end]);
    if bg_rms < SILENCE_RMS {
        return Err(Error::invalid("mix", "background is silent over the event span"));
    }
    let ev_rms = event.rms();
    if ev_rms < SILENCE_RMS {
        return Err(Error::invalid("mix", "event is silent"));
    }
    let gain = 10f64.powf(ebr_db / 20.0) * bg_rms / ev_rms;
    let mut samples = background.samples.clone();
    for (s, e) in samples[start..end].iter_mut().zip(&event.samples) {
        *s += gain * e;
    }
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > PEAK_LIMIT {
        samples.iter_mut().for_each(|s| *s *= PEAK_LIMIT / peak);
    }
    Ok(Mixed {
        audio: Waveform::new(samples, background.sample_rate)?,
        onset_s: start as f64 / sr,
        offset_s: end as f64 / sr,
        event_gain: gain,
    })
}

/// Adds unit-variance Gaussian noise scaled by `amplification`.
pub fn add_noise(w: &Waveform, amplification: f64, seed: u64) -> Result<Waveform> {
    if !(amplification >= 0.0) || !amplification.is_finite() {
        return Err(Error::invalid("noise amplification", format!("{amplification} must be finite and >= 0")));
    }
    if amplification == 0.0 {
        return Ok(w.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = w
        .samples
        .iter()
        .map(|s| {
            let z: f64 = StandardNormal.sample(&mut rng);
            s + amplification * z
        })
        .collect();
    Waveform::new(samples, w.sample_rate)
}

/// One annotated event. Background-only clips carry a single record with
/// `event == None`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationRecord {
    pub file: String,
    pub event: Option<(f64, f64, String)>,
}

impl fmt::Display for AnnotationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.event {
            Some((on, off, label)) => write!(f, "{}\t{on:.6}\t{off:.6}\t{label}", self.file),
            None => write!(f, "{}\t\t\tnone", self.file),
        }
    }
}

impl FromStr for AnnotationRecord {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = || Error::invalid("annotation", format!("malformed row {line:?}"));
        let [file, on, off, label] = cols[..] else {
            return Err(bad());
        };
        if file.is_empty() {
            return Err(bad());
        }
        if label == "none" && on.is_empty() && off.is_empty() {
            return Ok(AnnotationRecord {
                file: file.to_string(),
                event: None,
            });
        }
        let on: f64 = on.parse().map_err(|_| bad())?;
        let off: f64 = off.parse().map_err(|_| bad())?;
        if !(on >= 0.0 && off > on) || label.is_empty() || label == "none" {
            return Err(bad());
        }
        Ok(AnnotationRecord {
            file: file.to_string(),
            event: Some((on, off, label.to_string())),
        })
    }
}

pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRecord>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(str::parse).collect()
}

pub fn format_annotations(records: &[AnnotationRecord]) -> String {
    records.iter().map(|r| format!("{r}\n")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "dev" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid("split", format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub clips: usize,
    /// Fraction of clips that contain an event.
    pub presence: f64,
    pub sources_per_class: usize,
    pub backgrounds: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub sample_rate: u32,
    pub clip_s: f64,
    pub classes: Vec<ClassParams>,
    pub ebr_db: Vec<f64>,
    pub background_rms: f64,
    pub noise_amplification: f64,
    /// Overlapping events of distinct classes per positive clip.
    pub polyphonic: bool,
    pub train: SplitSpec,
    pub val: SplitSpec,
    pub test: SplitSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            sample_rate: 16000,
            clip_s: 5.0,
            classes: default_classes(),
            ebr_db: vec![-6.0, 0.0, 6.0],
            background_rms: 0.03,
            noise_amplification: 0.0,
            polyphonic: false,
            train: SplitSpec {
                clips: 200,
                presence: 0.99,
                sources_per_class: 20,
                backgrounds: 20,
            },
            val: SplitSpec {
                clips: 40,
                presence: 0.5,
                sources_per_class: 5,
                backgrounds: 5,
            },
            test: SplitSpec {
                clips: 50,
                presence: 0.5,
                sources_per_class: 5,
                backgrounds: 5,
            },
        }
    }
}

impl SynthConfig {
    pub fn split(&self, s: Split) -> &SplitSpec {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |r: String| Err(Error::invalid("synth config", r));
        if self.sample_rate == 0 || !(self.clip_s > 0.0) {
            return bad("sample rate and clip length must be positive".into());
        }
        if self.classes.is_empty() {
            return bad("need at least one class".into());
        }
        for c in &self.classes {
            c.validate()?;
            if c.max_dur > self.clip_s {
                return bad(format!("class {} can last {} s, longer than a {} s clip", c.name, c.max_dur, self.clip_s));
            }
        }
        let mut names: Vec<&str> = self.classes.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.classes.len() {
            return bad("class names must be distinct".into());
        }
        if self.ebr_db.is_empty() || self.ebr_db.iter().any(|e| !e.is_finite()) {
            return bad("need at least one finite EBR".into());
        }
        if !(self.background_rms > SILENCE_RMS) || !(self.noise_amplification >= 0.0) {
            return bad("background level must be positive and noise amplification non-negative".into());
        }
        for s in Split::ALL {
            let spec = self.split(s);
            if !(0.0..=1.0).contains(&spec.presence) {
                return bad(format!("{s} presence {} outside [0, 1]", spec.presence));
            }
            if spec.clips > 0 && (spec.sources_per_class == 0 || spec.backgrounds == 0) {
                return bad(format!("{s} needs at least one background and one source per class"));
            }
        }
        Ok(())
    }
}

/// Number of event clips for a split: `round(presence * clips)`.
pub fn positive_count(spec: &SplitSpec) -> usize {
    (spec.presence * spec.clips as f64).round() as usize
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    let mut z = master ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_SOURCE: u64 = 1;
const TAG_BACKGROUND: u64 = 2;
const TAG_CLIP: u64 = 3;
const TAG_NOISE: u64 = 4;
const TAG_LAYOUT: u64 = 5;

fn split_tag(s: Split) -> u64 {
    s as u64 + 1
}

/// Generated clip with its annotations, before anything touches the disk.
#[derive(Clone, Debug)]
pub struct Clip {
    pub file: String,
    pub split: Split,
    pub audio: Waveform,
    pub annotations: Vec<AnnotationRecord>,
}

/// Builds every clip of the dataset in memory, in manifest order.
pub fn synthesize(cfg: &SynthConfig) -> Result<Vec<Clip>> {
    cfg.validate()?;
    let len = (cfg.clip_s * cfg.sample_rate as f64).round() as usize;
    let mut clips = Vec::new();
    for split in Split::ALL {
        let spec = cfg.split(split);
        if spec.clips == 0 {
            continue;
        }
        let st = split_tag(split);
        // Source and background pools are indexed per split, so no two splits share one.
        let source_seed = |class: usize, i: usize| derive_seed(cfg.seed, TAG_SOURCE, (st << 48) | ((class as u64) << 24) | i as u64);
        let background_seed = |i: usize| derive_seed(cfg.seed, TAG_BACKGROUND, (st << 48) | i as u64);
        let mut layout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_LAYOUT, st));
        let mut order: Vec<usize> = (0..spec.clips).collect();
        order.shuffle(&mut layout_rng);
        let positives = positive_count(spec);
        let mut class_of = vec![None; spec.clips];
        for (rank, &clip) in order.iter().take(positives).enumerate() {
            class_of[clip] = Some(rank % cfg.classes.len());
        }
        let mut backgrounds = Vec::with_capacity(spec.backgrounds);
        for b in 0..spec.backgrounds {
            let mut rng = ChaCha8Rng::seed_from_u64(background_seed(b));
            let exponent = rng.random_range(0.8..1.2);
            let level = cfg.background_rms * rng.random_range(0.7..1.3);
            backgrounds.push(background(len, cfg.sample_rate, exponent, level, rng.random())?);
        }
        for idx in 0..spec.clips {
            let file = format!("{}_{idx:04}.wav", split.name());
            let clip_seed = derive_seed(cfg.seed, TAG_CLIP, (st << 48) | idx as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(clip_seed);
            let bg = &backgrounds[rng.random_range(0..backgrounds.len())];
            let shift = rng.random_range(0..len);
            let mut audio = Waveform::new(bg.samples[shift..].iter().chain(&bg.samples[..shift]).copied().collect(), cfg.sample_rate)?;
            let classes: Vec<usize> = match class_of[idx] {
                None => Vec::new(),
                Some(c) if !cfg.polyphonic => vec![c],
                Some(c) => {
                    let extra = rng.random_range(0..cfg.classes.len());
                    let mut others: Vec<usize> = (0..cfg.classes.len()).filter(|&o| o != c).collect();
                    others.shuffle(&mut rng);
                    std::iter::once(c).chain(others.into_iter().take(extra)).collect()
                }
            };
            let mut annotations = Vec::new();
            for c in classes {
                let class = &cfg.classes[c];
                let seed = source_seed(c, rng.random_range(0..spec.sources_per_class));
                let dur = ChaCha8Rng::seed_from_u64(seed).random_range(class.min_dur..=class.max_dur);
                let event = synth_event(class.archetype, class, dur, cfg.sample_rate, seed)?;
                let start = rng.random_range(0..=len - event.len());
                let ebr = cfg.ebr_db[rng.random_range(0..cfg.ebr_db.len())];
                let mixed = mix(&audio, &event, ebr, start as f64 / cfg.sample_rate as f64)?;
                audio = mixed.audio;
                annotations.push(AnnotationRecord {
                    file: file.clone(),
                    event: Some((mixed.onset_s, mixed.offset_s, class.name.clone())),
                });
            }
            annotations.sort_by(|a, b| {
                let key = |r: &AnnotationRecord| r.event.as_ref().map_or(0.0, |e| e.0);
                key(a).total_cmp(&key(b))
            });
            if annotations.is_empty() {
                annotations.push(AnnotationRecord {
                    file: file.clone(),
                    event: None,
                });
            }
            let audio = add_noise(&audio, cfg.noise_amplification, derive_seed(cfg.seed, TAG_NOISE, (st << 48) | idx as u64))?;
            clips.push(Clip {
                file,
                split,
                audio,
                annotations,
            });
        }
    }
    Ok(clips)
}

pub const AUDIO_DIR: &str = "audio";
pub const META_FILE: &str = "meta.tsv";
pub const MANIFEST_FILE: &str = "manifest.tsv";
/// Class names in index order, one per line.
pub const CLASSES_FILE: &str = "classes.txt";

/// Writes `audio/*.wav`, `meta.tsv`, `manifest.tsv` and `classes.txt` under `dir`.
pub fn generate_dataset(cfg: &SynthConfig, dir: impl AsRef<Path>) -> Result<Vec<Clip>> {
    let dir = dir.as_ref();
    let clips = synthesize(cfg)?;
    let audio_dir = dir.join(AUDIO_DIR);
    fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
    let mut meta = String::new();
    let mut manifest = String::new();
    for clip in &clips {
        write_wav(audio_dir.join(&clip.file), &clip.audio)?;
        meta.push_str(&format_annotations(&clip.annotations));
        manifest.push_str(&format!("{}\t{}\n", clip.file, clip.split));
    }
    write_text(&dir.join(META_FILE), &meta)?;
    write_text(&dir.join(MANIFEST_FILE), &manifest)?;
    let names: String = cfg.classes.iter().map(|c| format!("{}\n", c.name)).collect();
    write_text(&dir.join(CLASSES_FILE), &names)?;
    Ok(clips)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a `file<TAB>split` manifest.
pub fn parse_manifest(text: &str) -> Result<Vec<(String, Split)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| match l.split('\t').collect::<Vec<_>>()[..] {
            [file, split] if !file.is_empty() => Ok((file.to_string(), split.parse()?)),
            _ => Err(Error::invalid("manifest", format!("malformed row {l:?}"))),
        })
        .collect()
}
