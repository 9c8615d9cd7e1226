//! Stride-1 2-D convolution on a shared padded grid.
//!
//! The batch is copied into a zero-padded buffer laid out channel-major:
//! channel `c` holds all samples back to back, each `hp * wp` long, followed
//! by `kw - 1` spare zeros. Reading that channel from offset `i * wp + j`
//! lines up tap `(i, j)` with an output grid of `(batch * hp - kh + 1) * wp`
//! columns. Grid columns that straddle a sample boundary or fall in `wo..wp`
//! are scratch and are cropped away.
//!
//! How the taps are contracted depends on the channel counts:
//! - [`Strategy::Columns`]: few input channels; the shifted rows are copied
//!   into a `[c_in*kh*kw x grid]` matrix and multiplied once.
//! - [`Strategy::TapMix`]: few output channels; channels are mixed for every
//!   tap in one gemm over the unshifted buffer, then shifted rows are summed.
//! - [`Strategy::Taps`]: one gemm per tap against a strided view, accumulating
//!   into the grid.
//!
//! 1x1 kernels skip the padding and multiply the input directly.

use crate::gemm::{gemm, Mat, MatMut};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Strategy {
    Columns,
    TapMix,
    Taps,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeom {
    pub fn hp(&self) -> usize {
        self.h + 2 * self.ph
    }
    pub fn wp(&self) -> usize {
        self.w + 2 * self.pw
    }
    pub fn ho(&self) -> usize {
        self.hp() + 1 - self.kh
    }
    pub fn wo(&self) -> usize {
        self.wp() + 1 - self.kw
    }
    fn sample_plane(&self) -> usize {
        self.hp() * self.wp()
    }
    fn channel(&self) -> usize {
        self.batch * self.sample_plane() + self.kw - 1
    }
    fn grid(&self) -> usize {
        (self.batch * self.hp() + 1 - self.kh) * self.wp()
    }
    fn taps(&self) -> usize {
        self.kh * self.kw
    }
    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1
    }

    fn pad(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.c_in * self.channel()];
        let (h, w, wp, chan, sp) = (self.h, self.w, self.wp(), self.channel(), self.sample_plane());
        for s in 0..self.batch {
            for c in 0..self.c_in {
                for r in 0..h {
                    let src = ((s * self.c_in + c) * h + r) * w;
                    let dst = c * chan + s * sp + (r + self.ph) * wp + self.pw;
                    out[dst..dst + w].copy_from_slice(&x[src..src + w]);
                }
            }
        }
        out
    }

    fn strategy(&self) -> Strategy {
        if self.c_in * self.taps() <= 16 {
            Strategy::Columns
        } else if self.c_out * self.taps() <= self.c_in {
            Strategy::TapMix
        } else {
            Strategy::Taps
        }
    }

    /// Buffer offset that aligns tap `t` with the grid.
    fn shift(&self, t: usize) -> usize {
        (t / self.kw) * self.wp() + t % self.kw
    }

    /// Grid column of the first pixel in output row `r` of sample `s`.
    fn grid_at(&self, s: usize, r: usize) -> usize {
        s * self.sample_plane() + r * self.wp()
    }
}

fn columns(padded: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (n, chan) = (g.grid(), g.channel());
    let mut cols = Vec::with_capacity(g.c_in * g.taps() * n);
    for c in 0..g.c_in {
        for t in 0..g.taps() {
            let src = c * chan + g.shift(t);
            cols.extend_from_slice(&padded[src..src + n]);
        }
    }
    cols
}

/// Kernel reordered to `[(o, t), c]` for the tap-mix path.
fn tap_major(kernel: &[f64], g: &ConvGeom) -> Vec<f64> {
    let taps = g.taps();
    let mut kt = vec![0.0; kernel.len()];
    for o in 0..g.c_out {
        for c in 0..g.c_in {
            for t in 0..taps {
                kt[(o * taps + t) * g.c_in + c] = kernel[(o * g.c_in + c) * taps + t];
            }
        }
    }
    kt
}

/// `[c_out x grid]` convolution output on the padded grid.
fn grid_forward(padded: &[f64], kernel: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (n, chan, taps) = (g.grid(), g.channel(), g.taps());
    let kr = g.c_in * taps;
    let mut grid = vec![0.0; g.c_out * n];
    match g.strategy() {
        Strategy::Columns => {
            let cols = columns(padded, g);
            gemm(
                g.c_out,
                kr,
                n,
                1.0,
                Mat::rows(kernel, 0, kr),
                Mat::rows(&cols, 0, n),
                0.0,
                MatMut::rows(&mut grid, 0, n),
            );
        }
        Strategy::TapMix => {
            let kt = tap_major(kernel, g);
            let rows = g.c_out * taps;
            let mut mixed = vec![0.0; rows * chan];
            gemm(
                rows,
                g.c_in,
                chan,
                1.0,
                Mat::rows(&kt, 0, g.c_in),
                Mat::rows(padded, 0, chan),
                0.0,
                MatMut::rows(&mut mixed, 0, chan),
            );
            for o in 0..g.c_out {
                let dst = &mut grid[o * n..(o + 1) * n];
                for t in 0..taps {
                    let src = (o * taps + t) * chan + g.shift(t);
                    for (d, v) in dst.iter_mut().zip(&mixed[src..src + n]) {
                        *d += v;
                    }
                }
            }
        }
        Strategy::Taps => {
            for t in 0..taps {
                gemm(
                    g.c_out,
                    g.c_in,
                    n,
                    1.0,
                    Mat::new(kernel, t, kr, taps),
                    Mat::new(padded, g.shift(t), chan, 1),
                    if t == 0 { 0.0 } else { 1.0 },
                    MatMut::rows(&mut grid, 0, n),
                );
            }
        }
    }
    grid
}

/// Kernel gradient from the grid gradient.
fn grid_dk(padded: &[f64], dgrid: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (n, chan, taps) = (g.grid(), g.channel(), g.taps());
    let kr = g.c_in * taps;
    let mut dk = vec![0.0; g.c_out * kr];
    match g.strategy() {
        Strategy::Columns => {
            let cols = columns(padded, g);
            gemm(
                g.c_out,
                n,
                kr,
                1.0,
                Mat::rows(dgrid, 0, n),
                Mat::rows(&cols, 0, n).t(),
                0.0,
                MatMut::rows(&mut dk, 0, kr),
            );
        }
        Strategy::TapMix => {
            let dmixed = spread(dgrid, g);
            let rows = g.c_out * taps;
            let mut dkt = vec![0.0; rows * g.c_in];
            gemm(
                rows,
                chan,
                g.c_in,
                1.0,
                Mat::rows(&dmixed, 0, chan),
                Mat::rows(padded, 0, chan).t(),
                0.0,
                MatMut::rows(&mut dkt, 0, g.c_in),
            );
            for o in 0..g.c_out {
                for c in 0..g.c_in {
                    for t in 0..taps {
                        dk[(o * g.c_in + c) * taps + t] = dkt[(o * taps + t) * g.c_in + c];
                    }
                }
            }
        }
        Strategy::Taps => {
            for t in 0..taps {
                gemm(
                    g.c_out,
                    n,
                    g.c_in,
                    1.0,
                    Mat::rows(dgrid, 0, n),
                    Mat::new(padded, g.shift(t), 1, chan),
                    0.0,
                    MatMut::new(&mut dk, t, kr, taps),
                );
            }
        }
    }
    dk
}

/// Grid gradient copied to every tap's shift, `[(o, t) x channel]`.
fn spread(dgrid: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (n, chan, taps) = (g.grid(), g.channel(), g.taps());
    let mut out = vec![0.0; g.c_out * taps * chan];
    for o in 0..g.c_out {
        for t in 0..taps {
            let dst = (o * taps + t) * chan + g.shift(t);
            out[dst..dst + n].copy_from_slice(&dgrid[o * n..(o + 1) * n]);
        }
    }
    out
}

/// Gradient of the padded input buffer.
fn grid_dpad(kernel: &[f64], dgrid: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (n, chan, taps) = (g.grid(), g.channel(), g.taps());
    let kr = g.c_in * taps;
    let mut dpad = vec![0.0; g.c_in * chan];
    match g.strategy() {
        Strategy::Columns => {
            let mut dcols = vec![0.0; kr * n];
            gemm(
                kr,
                g.c_out,
                n,
                1.0,
                Mat::rows(kernel, 0, kr).t(),
                Mat::rows(dgrid, 0, n),
                0.0,
                MatMut::rows(&mut dcols, 0, n),
            );
            for c in 0..g.c_in {
                for t in 0..taps {
                    let dst = c * chan + g.shift(t);
                    let src = (c * taps + t) * n;
                    for (d, v) in dpad[dst..dst + n].iter_mut().zip(&dcols[src..src + n]) {
                        *d += v;
                    }
                }
            }
        }
        Strategy::TapMix => {
            let kt = tap_major(kernel, g);
            let dmixed = spread(dgrid, g);
            let rows = g.c_out * taps;
            gemm(
                g.c_in,
                rows,
                chan,
                1.0,
                Mat::rows(&kt, 0, g.c_in).t(),
                Mat::rows(&dmixed, 0, chan),
                0.0,
                MatMut::rows(&mut dpad, 0, chan),
            );
        }
        Strategy::Taps => {
            for t in 0..taps {
                gemm(
                    g.c_in,
                    g.c_out,
                    n,
                    1.0,
                    Mat::new(kernel, t, taps, kr),
                    Mat::rows(dgrid, 0, n),
                    1.0,
                    MatMut::new(&mut dpad, g.shift(t), chan, 1),
                );
            }
        }
    }
    dpad
}

pub(crate) fn forward(x: &[f64], kernel: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (ho, wo) = (g.ho(), g.wo());
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * ho * wo;
    if g.pointwise() {
        let hw = g.h * g.w;
        let mut out = vec![0.0; g.batch * out_len];
        for s in 0..g.batch {
            gemm(
                g.c_out,
                g.c_in,
                hw,
                1.0,
                Mat::rows(kernel, 0, g.c_in),
                Mat::rows(x, s * in_len, hw),
                0.0,
                MatMut::rows(&mut out, s * out_len, hw),
            );
        }
        return out;
    }
    let n = g.grid();
    let grid = grid_forward(&g.pad(x), kernel, g);
    let mut out = Vec::with_capacity(g.batch * out_len);
    for s in 0..g.batch {
        for c in 0..g.c_out {
            for r in 0..ho {
                let src = c * n + g.grid_at(s, r);
                out.extend_from_slice(&grid[src..src + wo]);
            }
        }
    }
    out
}

/// Gradients with respect to input and kernel, each computed only when asked for.
pub(crate) fn backward(x: &[f64], kernel: &[f64], dy: &[f64], g: &ConvGeom, need_dx: bool, need_dk: bool) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (ho, wo) = (g.ho(), g.wo());
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * ho * wo;
    if g.pointwise() {
        let hw = g.h * g.w;
        let mut dx = need_dx.then(|| vec![0.0; x.len()]);
        let mut dk = need_dk.then(|| vec![0.0; kernel.len()]);
        for s in 0..g.batch {
            if let Some(dk) = dk.as_mut() {
                gemm(
                    g.c_out,
                    hw,
                    g.c_in,
                    1.0,
                    Mat::rows(dy, s * out_len, hw),
                    Mat::rows(x, s * in_len, hw).t(),
                    1.0,
                    MatMut::rows(dk, 0, g.c_in),
                );
            }
            if let Some(dx) = dx.as_mut() {
                gemm(
                    g.c_in,
                    g.c_out,
                    hw,
                    1.0,
                    Mat::rows(kernel, 0, g.c_in).t(),
                    Mat::rows(dy, s * out_len, hw),
                    0.0,
                    MatMut::rows(dx, s * in_len, hw),
                );
            }
        }
        return (dx, dk);
    }
    let (n, chan, wp) = (g.grid(), g.channel(), g.wp());
    let mut dgrid = vec![0.0; g.c_out * n];
    for s in 0..g.batch {
        for c in 0..g.c_out {
            for r in 0..ho {
                let d = c * n + g.grid_at(s, r);
                let src = s * out_len + (c * ho + r) * wo;
                dgrid[d..d + wo].copy_from_slice(&dy[src..src + wo]);
            }
        }
    }
    let dk = need_dk.then(|| grid_dk(&g.pad(x), &dgrid, g));
    let dx = need_dx.then(|| {
        let dpad = grid_dpad(kernel, &dgrid, g);
        let mut dx = Vec::with_capacity(x.len());
        let sp = g.sample_plane();
        for s in 0..g.batch {
            for c in 0..g.c_in {
                for r in 0..g.h {
                    let src = c * chan + s * sp + (r + g.ph) * wp + g.pw;
                    dx.extend_from_slice(&dpad[src..src + g.w]);
                }
            }
        }
        dx
    });
    (dx, dk)
}
