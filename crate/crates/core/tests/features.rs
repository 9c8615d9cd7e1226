use std::f64::consts::PI;

use adamd_core::features::{frame_labels, mel_centers, mel_matrix, stft_power, LOG_FLOOR};
use adamd_core::{fbank, normalize, read_wav, segment, write_wav, FeatureMatrix, FeatureParams, LabelSpan, SegmentMode, Waveform};
use adamd_numerics::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// O(n^2) DFT power of one zero-padded, Hann-windowed frame.
fn naive_power(frame: &[f64], n_fft: usize) -> Vec<f64> {
    let win = frame.len();
    (0..=n_fft / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, x) in frame.iter().enumerate() {
                let w = 0.5 - 0.5 * (2.0 * PI * n as f64 / win as f64).cos();
                let phase = -2.0 * PI * ((k * n) % n_fft) as f64 / n_fft as f64;
                re += x * w * phase.cos();
                im += x * w * phase.sin();
            }
            re * re + im * im
        })
        .collect()
}

fn params(win_s: f64, hop_s: f64, n_fft: usize, n_mels: usize) -> FeatureParams {
    FeatureParams {
        win_s,
        hop_s,
        n_fft,
        n_mels,
        ..FeatureParams::default()
    }
}

#[test]
fn stft_matches_naive_dft() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let sr = 8000;
        let n_fft = [128, 256, 512][rng.random_range(0..3)];
        let win = rng.random_range(16..=n_fft);
        let hop = rng.random_range(8..=win);
        let len = rng.random_range(win..=4096);
        let p = params(win as f64 / sr as f64, hop as f64 / sr as f64, n_fft, 8);
        let samples: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = Waveform::new(samples.clone(), sr).unwrap();
        let got = stft_power(&w, &p).unwrap();
        let frames = 1 + (len - win) / hop;
        assert_eq!(got.shape(), &[frames, n_fft / 2 + 1]);
        for f in 0..frames {
            let expect = naive_power(&samples[f * hop..f * hop + win], n_fft);
            for (a, b) in got.data()[f * (n_fft / 2 + 1)..(f + 1) * (n_fft / 2 + 1)].iter().zip(&expect) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    assert!(worst < 1e-6, "max abs deviation {worst}");
}

#[test]
fn stft_parseval() {
    let p = FeatureParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let samples: Vec<f64> = (0..8000).map(|_| rng.random_range(-0.5..0.5)).collect();
    let w = Waveform::new(samples.clone(), 16000).unwrap();
    let power = stft_power(&w, &p).unwrap();
    let (win, hop, bins) = (p.win_samples(16000), p.hop_samples(16000), p.n_fft / 2 + 1);
    let hann: Vec<f64> = (0..win).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / win as f64).cos()).collect();
    for f in 0..power.shape()[0] {
        let row = &power.data()[f * bins..(f + 1) * bins];
        let full = row[0] + row[bins - 1] + 2.0 * row[1..bins - 1].iter().sum::<f64>();
        let energy: f64 = samples[f * hop..f * hop + win].iter().zip(&hann).map(|(x, h)| (x * h).powi(2)).sum();
        let rel = (full / p.n_fft as f64 - energy).abs() / energy;
        assert!(rel < 1e-6, "frame {f}: relative error {rel}");
    }
}

#[test]
fn bin_centred_sine_peaks_at_its_bin() {
    let p = FeatureParams::default();
    let sr = 16000;
    let bin = 100;
    let freq = bin as f64 * sr as f64 / p.n_fft as f64;
    let samples = (0..sr as usize).map(|n| (2.0 * PI * freq * n as f64 / sr as f64).sin()).collect();
    let power = stft_power(&Waveform::new(samples, sr).unwrap(), &p).unwrap();
    let bins = p.n_fft / 2 + 1;
    for row in power.data().chunks(bins) {
        let arg = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(arg, bin);
    }
}

#[test]
fn stft_zero_input_and_short_signal() {
    let p = FeatureParams::default();
    let power = stft_power(&Waveform::silence(4000, 16000), &p).unwrap();
    assert!(power.data().iter().all(|&v| v == 0.0));
    assert_eq!(power.shape()[0], 1 + (4000 - 640) / 320);
    assert!(stft_power(&Waveform::silence(639, 16000), &p).is_err());
}

#[test]
fn mel_rows_are_single_triangles() {
    let p = FeatureParams::default();
    let m = mel_matrix(&p, 16000);
    let bins = p.n_fft / 2 + 1;
    assert_eq!(m.shape(), &[128, bins]);
    for row in m.data().chunks(bins) {
        assert!(row.iter().all(|&v| v >= 0.0));
        let support: Vec<usize> = (0..bins).filter(|&b| row[b] > 0.0).collect();
        assert!(!support.is_empty());
        assert_eq!(support.last().unwrap() - support[0] + 1, support.len(), "support not contiguous");
    }
    let centers = mel_centers(128, 16000);
    assert!(centers.windows(2).all(|c| c[0] < c[1]));
    assert!(centers[0] > 0.0 && *centers.last().unwrap() < 8000.0);
}

#[test]
fn mel_on_flat_spectrum_is_row_sum() {
    let p = params(0.04, 0.02, 512, 20);
    let m = mel_matrix(&p, 8000);
    let bins = 257;
    for row in m.data().chunks(bins) {
        let applied: f64 = row.iter().map(|v| v * 2.5).sum();
        let sum: f64 = row.iter().sum();
        assert!((applied - 2.5 * sum).abs() < 1e-12);
    }
}

#[test]
fn fbank_zero_input_is_log_floor() {
    let p = FeatureParams::default();
    let f = fbank(&Waveform::silence(16000, 16000), &p).unwrap();
    assert_eq!(f.shape(), &[1 + (16000 - 640) / 320, 128]);
    assert!(f.data().iter().all(|&v| (v - LOG_FLOOR.ln()).abs() < 1e-12));
}

#[test]
fn fbank_doubling_amplitude_adds_log4() {
    let p = FeatureParams::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples: Vec<f64> = (0..16000).map(|_| rng.random_range(-0.3..0.3)).collect();
    let a = fbank(&Waveform::new(samples.clone(), 16000).unwrap(), &p).unwrap();
    let b = fbank(&Waveform::new(samples.iter().map(|s| 2.0 * s).collect(), 16000).unwrap(), &p).unwrap();
    for (x, y) in a.data().iter().zip(b.data()) {
        // white noise keeps every band far above the floor
        assert!(*x > -10.0);
        assert!((y - x - 4f64.ln()).abs() < 1e-9, "{x} {y}");
    }
}

#[test]
fn wav_round_trip_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.wav");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let samples: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
    write_wav(&path, &Waveform::new(samples.clone(), 16000).unwrap()).unwrap();
    let back = read_wav(&path).unwrap();
    assert_eq!(back.sample_rate, 16000);
    for (a, b) in samples.iter().zip(&back.samples) {
        assert!((a - b).abs() <= 1.0 / 32768.0 + 1e-12);
    }
}

fn matrix(values: Vec<f64>, rows: usize, cols: usize) -> FeatureMatrix {
    FeatureMatrix {
        values: Tensor::new(&[rows, cols], values).unwrap(),
        labels: Tensor::zeros(&[rows, 1]),
        valid: rows,
        hop_s: 0.02,
        origin_s: 0.0,
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

#[test]
fn normalize_examples() {
    let out = normalize(&matrix(vec![0.0, 2.0], 1, 2));
    assert_eq!(out.values.data(), &[-1.0, 1.0]);
    let out = normalize(&matrix(vec![3.5; 12], 4, 3));
    assert!(out.values.data().iter().all(|&v| v == 0.0));
}

#[test]
fn normalize_ignores_padding_rows() {
    let mut m = matrix(vec![0.0, 2.0, 9.0, 9.0], 2, 2);
    m.valid = 1;
    let out = normalize(&m);
    assert_eq!(out.values.data(), &[-1.0, 1.0, 0.0, 0.0]);
}

#[test]
fn segment_examples() {
    let p = FeatureParams {
        segment_len: 512,
        step_fraction: 0.5,
        ..FeatureParams::default()
    };
    let segs = |n: usize, mode| segment(&Tensor::zeros(&[n, 4]), &Tensor::zeros(&[n, 1]), &p, mode).unwrap();
    let s = segs(1024, SegmentMode::Train);
    let origins: Vec<f64> = s.iter().map(|m| m.origin_s / p.hop_s).map(f64::round).collect();
    assert_eq!(origins, vec![0.0, 256.0, 512.0]);
    assert_eq!(segs(512, SegmentMode::Train).len(), 1);
    let e = segs(1500, SegmentMode::Eval);
    assert_eq!(e.len(), 1);
    assert_eq!(e[0].frames(), 1500);
    assert!(segment(&Tensor::zeros(&[0, 4]), &Tensor::zeros(&[0, 1]), &p, SegmentMode::Eval).is_err());
}

#[test]
fn short_file_becomes_one_masked_segment() {
    let p = FeatureParams::desk();
    let x = Tensor::full(&[100, 2], 1.0);
    let s = segment(&x, &Tensor::full(&[100, 1], 1.0), &p, SegmentMode::Train).unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!((s[0].frames(), s[0].valid), (256, 100));
    assert_eq!(s[0].labels.data()[99], 1.0);
    assert_eq!(s[0].labels.data()[100], 0.0);
}

#[test]
fn labels_use_frame_centres() {
    let p = FeatureParams::default();
    // centres are at 0.02 i + 0.02
    let spans = [LabelSpan {
        onset: 0.1,
        offset: 0.2,
        class: 1,
    }];
    let l = frame_labels(&spans, 20, 2, &p);
    let active: Vec<usize> = (0..20).filter(|&i| l.data()[i * 2 + 1] == 1.0).collect();
    assert_eq!(active, (4..=9).collect::<Vec<_>>());
    assert!((0..20).all(|i| l.data()[i * 2] == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn normalize_is_z_score_and_idempotent(v in prop::collection::vec(-50.0f64..50.0, 4..200)) {
        let n = v.len();
        let (_, s0) = mean_std(&v);
        prop_assume!(s0 > 1e-3);
        let once = normalize(&matrix(v, n, 1));
        let (m, s) = mean_std(once.values.data());
        prop_assert!(m.abs() < 1e-9);
        prop_assert!((s - 1.0).abs() < 1e-6);
        let twice = normalize(&once);
        for (a, b) in once.values.data().iter().zip(twice.values.data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn segments_cover_every_frame(frames in 1usize..2000, tau in 1usize..600, frac in 0.05f64..=1.0) {
        let p = FeatureParams { segment_len: tau, step_fraction: frac, ..FeatureParams::default() };
        let x = Tensor::new(&[frames, 1], (0..frames).map(|i| i as f64).collect()).unwrap();
        let segs = segment(&x, &Tensor::zeros(&[frames, 1]), &p, SegmentMode::Train).unwrap();
        let mut seen = vec![false; frames];
        for s in &segs {
            prop_assert_eq!(s.frames(), tau);
            let start = (s.origin_s / p.hop_s).round() as usize;
            for r in 0..s.valid {
                prop_assert_eq!(s.values.data()[r], (start + r) as f64);
                seen[start + r] = true;
            }
        }
        prop_assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn label_onset_within_one_hop(onset in 0.0f64..4.0, dur in 0.05f64..1.0) {
        let p = FeatureParams::default();
        let spans = [LabelSpan { onset, offset: onset + dur, class: 0 }];
        let l = frame_labels(&spans, 300, 1, &p);
        let first = (0..300).find(|&i| l.data()[i] == 1.0).unwrap();
        let start = first as f64 * p.hop_s;
        prop_assert!((start - onset).abs() <= p.hop_s + p.win_s / 2.0 + 1e-12);
        prop_assert!(p.frame_center(first) >= onset && p.frame_center(first) - onset <= p.hop_s + 1e-12);
    }
}
