//! Single-direction GRU layer over a batch of sequences.
//!
//! Gate layout along the `3h` axis is `[reset, update, candidate]`:
//!
//! ```text
//! r = σ(x W_r + b_r + h' U_r)
//! z = σ(x W_z + b_z + h' U_z)
//! n = tanh(x W_n + b_n + (r ⊙ h') U_n)
//! h = (1 - z) ⊙ n + z ⊙ h'
//! ```
//!
//! with `h'` the previous state (zeros at the first step).

use crate::gemm::{gemm, Mat, MatMut};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct GruDims {
    pub batch: usize,
    pub steps: usize,
    pub input: usize,
    pub hidden: usize,
}

/// Per-step activations kept for the backward pass, indexed by time.
#[derive(Clone, Debug)]
pub(crate) struct GruCache {
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    h_prev: Vec<f64>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl GruDims {
    fn order(&self, step: usize, reverse: bool) -> usize {
        if reverse {
            self.steps - 1 - step
        } else {
            step
        }
    }
    /// Offset of `[b, t, 0]` in a `[batch, steps, width]` buffer.
    fn at(&self, b: usize, t: usize, width: usize) -> usize {
        (b * self.steps + t) * width
    }
}

pub(crate) fn forward(x: &[f64], w_ih: &[f64], w_hh: &[f64], bias: &[f64], d: &GruDims, reverse: bool) -> (Vec<f64>, GruCache) {
    let (bsz, hs) = (d.batch, d.hidden);
    let g3 = 3 * hs;
    let rows = bsz * d.steps;
    let mut gx = vec![0.0; rows * g3];
    for row in gx.chunks_exact_mut(g3) {
        row.copy_from_slice(bias);
    }
    gemm(
        rows,
        d.input,
        g3,
        1.0,
        Mat::rows(x, 0, d.input),
        Mat::rows(w_ih, 0, g3),
        1.0,
        MatMut::rows(&mut gx, 0, g3),
    );

    let per_t = bsz * hs;
    let mut cache = GruCache {
        r: vec![0.0; d.steps * per_t],
        z: vec![0.0; d.steps * per_t],
        n: vec![0.0; d.steps * per_t],
        h_prev: vec![0.0; d.steps * per_t],
    };
    let mut out = vec![0.0; rows * hs];
    let mut h = vec![0.0; per_t];
    let mut ghrz = vec![0.0; bsz * 2 * hs];
    let mut rh = vec![0.0; per_t];
    let mut ghn = vec![0.0; per_t];
    for step in 0..d.steps {
        let t = d.order(step, reverse);
        let c0 = t * per_t;
        cache.h_prev[c0..c0 + per_t].copy_from_slice(&h);
        gemm(
            bsz,
            hs,
            2 * hs,
            1.0,
            Mat::rows(&h, 0, hs),
            Mat::new(w_hh, 0, g3, 1),
            0.0,
            MatMut::rows(&mut ghrz, 0, 2 * hs),
        );
        for b in 0..bsz {
            let gxo = d.at(b, t, g3);
            for j in 0..hs {
                let i = b * hs + j;
                let r = sigmoid(gx[gxo + j] + ghrz[b * 2 * hs + j]);
                let z = sigmoid(gx[gxo + hs + j] + ghrz[b * 2 * hs + hs + j]);
                cache.r[c0 + i] = r;
                cache.z[c0 + i] = z;
                rh[i] = r * h[i];
            }
        }
        gemm(
            bsz,
            hs,
            hs,
            1.0,
            Mat::rows(&rh, 0, hs),
            Mat::new(w_hh, 2 * hs, g3, 1),
            0.0,
            MatMut::rows(&mut ghn, 0, hs),
        );
        for b in 0..bsz {
            let gxo = d.at(b, t, g3);
            let oo = d.at(b, t, hs);
            for j in 0..hs {
                let i = b * hs + j;
                let n = (gx[gxo + 2 * hs + j] + ghn[i]).tanh();
                let z = cache.z[c0 + i];
                cache.n[c0 + i] = n;
                h[i] = (1.0 - z) * n + z * h[i];
                out[oo + j] = h[i];
            }
        }
    }
    (out, cache)
}

pub(crate) struct GruGrads {
    pub dx: Vec<f64>,
    pub dw_ih: Vec<f64>,
    pub dw_hh: Vec<f64>,
    pub dbias: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(x: &[f64], w_ih: &[f64], w_hh: &[f64], cache: &GruCache, dout: &[f64], d: &GruDims, reverse: bool) -> GruGrads {
    let (bsz, hs) = (d.batch, d.hidden);
    let g3 = 3 * hs;
    let rows = bsz * d.steps;
    let per_t = bsz * hs;
    let mut dgx = vec![0.0; rows * g3];
    let mut dw_hh = vec![0.0; w_hh.len()];
    let mut dh_next = vec![0.0; per_t];
    let mut dh = vec![0.0; per_t];
    let mut dan = vec![0.0; per_t];
    let mut drh = vec![0.0; per_t];
    let mut rh = vec![0.0; per_t];
    for step in (0..d.steps).rev() {
        let t = d.order(step, reverse);
        let c0 = t * per_t;
        let hp = &cache.h_prev[c0..c0 + per_t];
        for b in 0..bsz {
            let oo = d.at(b, t, hs);
            for j in 0..hs {
                let i = b * hs + j;
                dh[i] = dout[oo + j] + dh_next[i];
                let (z, n) = (cache.z[c0 + i], cache.n[c0 + i]);
                let dn = dh[i] * (1.0 - z);
                dan[i] = dn * (1.0 - n * n);
                dgx[d.at(b, t, g3) + 2 * hs + j] = dan[i];
                rh[i] = cache.r[c0 + i] * hp[i];
            }
        }
        // candidate path: ghn = (r ⊙ h') U_n
        gemm(
            bsz,
            hs,
            hs,
            1.0,
            Mat::rows(&dan, 0, hs),
            Mat::new(w_hh, 2 * hs, 1, g3),
            0.0,
            MatMut::rows(&mut drh, 0, hs),
        );
        gemm(
            hs,
            bsz,
            hs,
            1.0,
            Mat::rows(&rh, 0, hs).t(),
            Mat::rows(&dan, 0, hs),
            1.0,
            MatMut::new(&mut dw_hh, 2 * hs, g3, 1),
        );
        for b in 0..bsz {
            let go = d.at(b, t, g3);
            for j in 0..hs {
                let i = b * hs + j;
                let (r, z, n) = (cache.r[c0 + i], cache.z[c0 + i], cache.n[c0 + i]);
                let dr = drh[i] * hp[i];
                let dz = dh[i] * (hp[i] - n);
                dgx[go + j] = dr * r * (1.0 - r);
                dgx[go + hs + j] = dz * z * (1.0 - z);
                dh_next[i] = dh[i] * z + drh[i] * r;
            }
        }
        // reset/update path: ghrz = h' U_rz; rows of dgx for this step have stride steps*3h
        let rz = Mat::new(&dgx, t * g3, d.steps * g3, 1);
        gemm(hs, bsz, 2 * hs, 1.0, Mat::rows(hp, 0, hs).t(), rz, 1.0, MatMut::new(&mut dw_hh, 0, g3, 1));
        gemm(bsz, 2 * hs, hs, 1.0, rz, Mat::new(w_hh, 0, 1, g3), 1.0, MatMut::rows(&mut dh_next, 0, hs));
    }
    let mut dw_ih = vec![0.0; w_ih.len()];
    gemm(
        d.input,
        rows,
        g3,
        1.0,
        Mat::rows(x, 0, d.input).t(),
        Mat::rows(&dgx, 0, g3),
        0.0,
        MatMut::rows(&mut dw_ih, 0, g3),
    );
    let mut dx = vec![0.0; x.len()];
    gemm(
        rows,
        g3,
        d.input,
        1.0,
        Mat::rows(&dgx, 0, g3),
        Mat::rows(w_ih, 0, g3).t(),
        0.0,
        MatMut::rows(&mut dx, 0, d.input),
    );
    let mut dbias = vec![0.0; g3];
    for row in dgx.chunks_exact(g3) {
        for (a, v) in dbias.iter_mut().zip(row) {
            *a += v;
        }
    }
    GruGrads { dx, dw_ih, dw_hh, dbias }
}

/// Gate activations of the most recent forward pass, for range checks.
pub(crate) fn gate_ranges(cache: &GruCache) -> [(f64, f64); 3] {
    let range = |v: &[f64]| v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    [range(&cache.r), range(&cache.z), range(&cache.n)]
}
