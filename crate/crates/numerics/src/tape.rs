//! Eager tape for reverse-mode differentiation.
//!
//! Every op evaluates immediately and appends a record. Records only refer
//! to earlier records, so a single reverse sweep visits each one once.

use crate::conv::{self, ConvGeom};
use crate::error::{NumericsError, Result};
use crate::gemm::{gemm, Mat, MatMut};
use crate::gru::{self, GruCache, GruDims};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output keeps the input's spatial size (odd kernels only).
    Same,
    Valid,
}

/// BCE clamps predictions into `[BCE_CLAMP, 1 - BCE_CLAMP]` before the logarithm.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Reshape(Var),
    ConcatLast(Var, Var),
    BiasChannels(Var, Var),
    Conv2d {
        x: Var,
        k: Var,
        geom: ConvGeom,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    UpsampleNearest2d(Var),
    UpsampleLinearTime {
        x: Var,
        factor: usize,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Bce {
        pred: Var,
        dpred: Vec<f64>,
    },
    Gru {
        x: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
        dims: GruDims,
        reverse: bool,
        cache: GruCache,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Tensor>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Splits a `[.., C, H, W]` shape into `(batch, C, H, W)`; rank 3 means batch 1.
fn chw(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((1, c, h, w)),
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(NumericsError::shape(op, "[C,H,W] or [B,C,H,W]", shape)),
    }
}

fn with_chw(shape: &[usize], c: usize, h: usize, w: usize) -> Vec<usize> {
    let mut out = shape[..shape.len() - 3].to_vec();
    out.extend([c, h, w]);
    out
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records an input. Gradients are kept only for leaves with `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` target with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(NumericsError::shape("add", format!("{:?}", va.shape()), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(va.shape(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, rg, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(NumericsError::shape("mul", format!("{:?}", va.shape()), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(va.shape(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.needs(&[x]);
        self.push(value, rg, Op::Scale(x, factor))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        let rg = self.needs(&[x]);
        self.push(value, rg, Op::Sum(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.needs(&[x]);
        self.push(value, rg, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        let rg = self.needs(&[x]);
        self.push(value, rg, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        let rg = self.needs(&[x]);
        self.push(value, rg, Op::Tanh(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, rg, Op::Reshape(x)))
    }

    /// Concatenates along the last axis; all leading axes must agree.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(NumericsError::shape("concat_last", format!("leading axes of {sa:?}"), sb));
        }
        let (ca, cb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let mut data = Vec::with_capacity(va.len() + vb.len());
        for (ra, rb) in va.data().chunks_exact(ca.max(1)).zip(vb.data().chunks_exact(cb.max(1))) {
            data.extend_from_slice(&ra[..ca]);
            data.extend_from_slice(&rb[..cb]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let value = Tensor::new(&shape, data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, rg, Op::ConcatLast(a, b)))
    }

    /// Adds `bias[c]` to every element of channel `c` of a `[.., C, H, W]` tensor.
    pub fn bias_channels(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, c, h, w) = chw("bias_channels", self.shape(x))?;
        let vb = self.value(bias);
        if vb.len() != c {
            return Err(NumericsError::shape("bias_channels", format!("[{c}]"), vb.shape()));
        }
        let bias_data = vb.data().to_vec();
        let mut value = self.value(x).clone();
        for (i, plane) in value.data_mut().chunks_exact_mut(h * w).enumerate() {
            let b = bias_data[i % c];
            plane.iter_mut().for_each(|v| *v += b);
        }
        let rg = self.needs(&[x, bias]);
        Ok(self.push(value, rg, Op::BiasChannels(x, bias)))
    }

    /// Stride-1 convolution of `[C_in,H,W]` (or batched `[B,C_in,H,W]`) with a
    /// `[C_out,C_in,kh,kw]` kernel.
    pub fn conv2d(&mut self, x: Var, kernel: Var, padding: Padding) -> Result<Var> {
        let (b, c_in, h, w) = chw("conv2d", self.shape(x))?;
        let ks = self.shape(kernel).to_vec();
        let [c_out, kc, kh, kw] = ks[..] else {
            return Err(NumericsError::shape("conv2d", "kernel [C_out,C_in,kh,kw]", &ks));
        };
        if kc != c_in {
            return Err(NumericsError::shape(
                "conv2d",
                format!("kernel with C_in = {c_in} to match input {:?}", self.shape(x)),
                &ks,
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(NumericsError::invalid("conv2d", format!("kernel {kh}x{kw} must have odd sides")));
        }
        let (ph, pw) = match padding {
            Padding::Same => (kh / 2, kw / 2),
            Padding::Valid => (0, 0),
        };
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(NumericsError::shape("conv2d", format!("input at least {kh}x{kw}"), self.shape(x)));
        }
        let geom = ConvGeom {
            batch: b,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            ph,
            pw,
        };
        let data = conv::forward(self.value(x).data(), self.value(kernel).data(), &geom);
        let shape = with_chw(self.shape(x), c_out, geom.ho(), geom.wo());
        let value = Tensor::new(&shape, data)?;
        let rg = self.needs(&[x, kernel]);
        Ok(self.push(value, rg, Op::Conv2d { x, k: kernel, geom }))
    }

    /// 2x2 max pooling; ties resolve to the lowest flat index.
    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (b, c, h, w) = chw("maxpool2d", &shape)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(NumericsError::shape("maxpool2d", "even H and W", &shape));
        }
        let (ho, wo) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(b * c * ho * wo);
        let mut argmax = Vec::with_capacity(b * c * ho * wo);
        for p in 0..b * c {
            let base = p * h * w;
            for r in 0..ho {
                for q in 0..wo {
                    let top = base + 2 * r * w + 2 * q;
                    let mut best = top;
                    for idx in [top + 1, top + w, top + w + 1] {
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    data.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(&with_chw(&shape, c, ho, wo), data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, rg, Op::MaxPool2d { x, argmax }))
    }

    /// Argmax positions recorded by a max-pool (flat indices into its input).
    pub fn pool_indices(&self, v: Var) -> Option<&[usize]> {
        match &self.nodes[v.0].op {
            Op::MaxPool2d { argmax, .. } => Some(argmax),
            _ => None,
        }
    }

    /// Replicates every element into a 2x2 block.
    pub fn upsample_nearest2d(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (b, c, h, w) = chw("upsample_nearest2d", &shape)?;
        let src = self.value(x).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut data = vec![0.0; b * c * h2 * w2];
        for p in 0..b * c {
            for r in 0..h2 {
                for q in 0..w2 {
                    data[p * h2 * w2 + r * w2 + q] = src[p * h * w + (r / 2) * w + q / 2];
                }
            }
        }
        let value = Tensor::new(&with_chw(&shape, c, h2, w2), data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, rg, Op::UpsampleNearest2d(x)))
    }

    /// Align-corners linear interpolation along time by an integer factor.
    ///
    /// A rank-1 input is a single series `[T]`; otherwise the time axis is the
    /// second to last, `[.., T, C]`.
    pub fn upsample_linear_time(&mut self, x: Var, factor: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, t, c) = time_layout(&shape);
        if t < 2 {
            return Err(NumericsError::shape("upsample_linear_time", "at least 2 frames", &shape));
        }
        if factor == 0 {
            return Err(NumericsError::invalid("upsample_linear_time", "factor must be positive"));
        }
        let to = t * factor;
        let src = self.value(x).data();
        let mut data = vec![0.0; outer * to * c];
        for o in 0..outer {
            for j in 0..to {
                let (i0, frac) = interp_source(j, t, to);
                for ch in 0..c {
                    let a = src[(o * t + i0) * c + ch];
                    let b = src[(o * t + i0 + 1) * c + ch];
                    data[(o * to + j) * c + ch] = (1.0 - frac) * a + frac * b;
                }
            }
        }
        let mut out_shape = shape.clone();
        let axis = if shape.len() == 1 { 0 } else { shape.len() - 2 };
        out_shape[axis] = to;
        let value = Tensor::new(&out_shape, data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, rg, Op::UpsampleLinearTime { x, factor }))
    }

    /// Affine map `x W + b` along the last axis.
    pub fn dense(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        let [d_in, d_out] = ws[..] else {
            return Err(NumericsError::shape("dense", "weight [D_in,D_out]", &ws));
        };
        if xs.last() != Some(&d_in) {
            return Err(NumericsError::shape("dense", format!("input with trailing dim {d_in}"), &xs));
        }
        if self.value(bias).len() != d_out {
            return Err(NumericsError::shape("dense", format!("bias [{d_out}]"), self.shape(bias)));
        }
        let rows = self.value(x).len() / d_in;
        let mut data = vec![0.0; rows * d_out];
        for row in data.chunks_exact_mut(d_out) {
            row.copy_from_slice(self.value(bias).data());
        }
        gemm(
            rows,
            d_in,
            d_out,
            1.0,
            Mat::rows(self.value(x).data(), 0, d_in),
            Mat::rows(self.value(weight).data(), 0, d_out),
            1.0,
            MatMut::rows(&mut data, 0, d_out),
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = d_out;
        let value = Tensor::new(&shape, data)?;
        let rg = self.needs(&[x, weight, bias]);
        Ok(self.push(value, rg, Op::Dense { x, w: weight, b: bias }))
    }

    /// Weighted binary cross-entropy.
    ///
    /// `pred` is split into `sample_weight.len()` equal contiguous samples.
    /// Each sample contributes `w * mean(bce)` over its unmasked cells, and the
    /// result is the sum over samples. Predictions are clamped to
    /// `[1e-7, 1 - 1e-7]` before the logarithm.
    pub fn bce(&mut self, pred: Var, target: &Tensor, sample_weight: &[f64], mask: Option<&Tensor>) -> Result<Var> {
        let vp = self.value(pred);
        if target.shape() != vp.shape() {
            return Err(NumericsError::shape(
                "bce",
                format!("target shaped like {:?}", vp.shape()),
                target.shape(),
            ));
        }
        if let Some(m) = mask {
            if m.shape() != vp.shape() {
                return Err(NumericsError::shape("bce", format!("mask shaped like {:?}", vp.shape()), m.shape()));
            }
        }
        let n = sample_weight.len();
        if n == 0 || vp.len() % n != 0 {
            return Err(NumericsError::invalid(
                "bce",
                format!("{} cells cannot be split into {} samples", vp.len(), n),
            ));
        }
        if !vp.is_finite() || !target.is_finite() || sample_weight.iter().any(|w| !w.is_finite()) {
            return Err(NumericsError::NonFinite { op: "bce" });
        }
        let cells = vp.len() / n;
        let mut total = 0.0;
        let mut dpred = vec![0.0; vp.len()];
        for s in 0..n {
            let range = s * cells..(s + 1) * cells;
            let count: f64 = match mask {
                Some(m) => m.data()[range.clone()].iter().sum(),
                None => cells as f64,
            };
            if count <= 0.0 {
                continue;
            }
            let mut acc = 0.0;
            for i in range {
                let m = mask.map_or(1.0, |m| m.data()[i]);
                if m == 0.0 {
                    continue;
                }
                let p_raw = vp.data()[i];
                let p = p_raw.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                let y = target.data()[i];
                acc -= m * (y * p.ln() + (1.0 - y) * (1.0 - p).ln());
                if p == p_raw {
                    dpred[i] = sample_weight[s] * m * (p - y) / (p * (1.0 - p)) / count;
                }
            }
            total += sample_weight[s] * acc / count;
        }
        let rg = self.needs(&[pred]);
        Ok(self.push(Tensor::scalar(total), rg, Op::Bce { pred, dpred }))
    }

    /// One direction of a GRU over `[B, T, input]` (or `[T, input]`).
    ///
    /// `w_ih` is `[input, 3h]`, `w_hh` is `[h, 3h]`, `bias` is `[3h]`, gate
    /// blocks ordered reset, update, candidate. `reverse` runs from the last
    /// step to the first; outputs stay in input time order.
    pub fn gru(&mut self, x: Var, w_ih: Var, w_hh: Var, bias: Var, reverse: bool) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (batch, steps, input) = match xs[..] {
            [t, i] => (1, t, i),
            [b, t, i] => (b, t, i),
            _ => return Err(NumericsError::shape("gru", "[T,I] or [B,T,I]", &xs)),
        };
        let hs = self.shape(w_hh).to_vec();
        let [hidden, g3] = hs[..] else {
            return Err(NumericsError::shape("gru", "w_hh [H,3H]", &hs));
        };
        if g3 != 3 * hidden {
            return Err(NumericsError::shape("gru", format!("w_hh [{hidden},{}]", 3 * hidden), &hs));
        }
        if self.shape(w_ih) != [input, g3] {
            return Err(NumericsError::shape("gru", format!("w_ih [{input},{g3}]"), self.shape(w_ih)));
        }
        if self.shape(bias) != [g3] {
            return Err(NumericsError::shape("gru", format!("bias [{g3}]"), self.shape(bias)));
        }
        let dims = GruDims { batch, steps, input, hidden };
        let (data, cache) = gru::forward(
            self.value(x).data(),
            self.value(w_ih).data(),
            self.value(w_hh).data(),
            self.value(bias).data(),
            &dims,
            reverse,
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = hidden;
        let value = Tensor::new(&shape, data)?;
        let rg = self.needs(&[x, w_ih, w_hh, bias]);
        Ok(self.push(
            value,
            rg,
            Op::Gru {
                x,
                w_ih,
                w_hh,
                bias,
                dims,
                reverse,
                cache,
            },
        ))
    }

    /// Min/max of the reset, update and candidate activations of a GRU record.
    pub fn gru_gate_ranges(&self, v: Var) -> Option<[(f64, f64); 3]> {
        match &self.nodes[v.0].op {
            Op::Gru { cache, .. } => Some(gru::gate_ranges(cache)),
            _ => None,
        }
    }

    /// Back-propagates from a one-element output, filling leaf gradients.
    ///
    /// Gradients from an earlier call are replaced.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        if self.value(out).len() != 1 {
            return Err(NumericsError::shape("backward", "a one-element output", self.shape(out)));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(vec![1.0]);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let shape = self.nodes[i].value.shape().to_vec();
                self.nodes[i].grad = Some(Tensor::new(&shape, g)?);
                continue;
            }
            for (input, ig) in self.input_grads(i, g) {
                if self.nodes[input.0].requires_grad {
                    accumulate(&mut grads[input.0], ig);
                }
            }
        }
        Ok(())
    }

    fn input_grads(&self, i: usize, g: Vec<f64>) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g)],
            Op::Mul(a, b) => {
                let ga = g.iter().zip(val(*b)).map(|(g, y)| g * y).collect();
                let gb = g.iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(x, f) => vec![(*x, g.iter().map(|g| g * f).collect())],
            Op::Sum(x) => vec![(*x, vec![g[0]; val(*x).len()])],
            Op::Relu(x) => {
                let gx = g.iter().zip(val(*x)).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect();
                vec![(*x, gx)]
            }
            Op::Sigmoid(x) => {
                let gx = g.iter().zip(node.value.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
                vec![(*x, gx)]
            }
            Op::Tanh(x) => {
                let gx = g.iter().zip(node.value.data()).map(|(g, t)| g * (1.0 - t * t)).collect();
                vec![(*x, gx)]
            }
            Op::Reshape(x) => vec![(*x, g)],
            Op::ConcatLast(a, b) => {
                let sa = self.nodes[a.0].value.shape();
                let sb = self.nodes[b.0].value.shape();
                let (ca, cb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
                let rows = g.len() / (ca + cb).max(1);
                let mut ga = Vec::with_capacity(rows * ca);
                let mut gb = Vec::with_capacity(rows * cb);
                for r in 0..rows {
                    let row = &g[r * (ca + cb)..(r + 1) * (ca + cb)];
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::BiasChannels(x, b) => {
                let s = node.value.shape();
                let (c, hw) = (s[s.len() - 3], s[s.len() - 2] * s[s.len() - 1]);
                let mut gb = vec![0.0; c];
                for (p, plane) in g.chunks_exact(hw).enumerate() {
                    gb[p % c] += plane.iter().sum::<f64>();
                }
                vec![(*x, g), (*b, gb)]
            }
            Op::Conv2d { x, k, geom } => {
                let (dx, dk) = conv::backward(val(*x), val(*k), &g, geom, rg(*x), rg(*k));
                let mut out = Vec::new();
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                if let Some(dk) = dk {
                    out.push((*k, dk));
                }
                out
            }
            Op::MaxPool2d { x, argmax } => {
                let mut gx = vec![0.0; val(*x).len()];
                for (gv, &idx) in g.iter().zip(argmax) {
                    gx[idx] += gv;
                }
                vec![(*x, gx)]
            }
            Op::UpsampleNearest2d(x) => {
                let s = self.nodes[x.0].value.shape();
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let planes = val(*x).len() / (h * w);
                let (h2, w2) = (2 * h, 2 * w);
                let mut gx = vec![0.0; val(*x).len()];
                for p in 0..planes {
                    for r in 0..h2 {
                        for q in 0..w2 {
                            gx[p * h * w + (r / 2) * w + q / 2] += g[p * h2 * w2 + r * w2 + q];
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::UpsampleLinearTime { x, factor } => {
                let (outer, t, c) = time_layout(self.nodes[x.0].value.shape());
                let to = t * factor;
                let mut gx = vec![0.0; val(*x).len()];
                for o in 0..outer {
                    for j in 0..to {
                        let (i0, frac) = interp_source(j, t, to);
                        for ch in 0..c {
                            let gv = g[(o * to + j) * c + ch];
                            gx[(o * t + i0) * c + ch] += (1.0 - frac) * gv;
                            gx[(o * t + i0 + 1) * c + ch] += frac * gv;
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::Dense { x, w, b } => {
                let ws = self.nodes[w.0].value.shape();
                let (d_in, d_out) = (ws[0], ws[1]);
                let rows = g.len() / d_out;
                let mut out = Vec::new();
                if rg(*x) {
                    let mut gx = vec![0.0; rows * d_in];
                    gemm(
                        rows,
                        d_out,
                        d_in,
                        1.0,
                        Mat::rows(&g, 0, d_out),
                        Mat::rows(val(*w), 0, d_out).t(),
                        0.0,
                        MatMut::rows(&mut gx, 0, d_in),
                    );
                    out.push((*x, gx));
                }
                if rg(*w) {
                    let mut gw = vec![0.0; d_in * d_out];
                    gemm(
                        d_in,
                        rows,
                        d_out,
                        1.0,
                        Mat::rows(val(*x), 0, d_in).t(),
                        Mat::rows(&g, 0, d_out),
                        0.0,
                        MatMut::rows(&mut gw, 0, d_out),
                    );
                    out.push((*w, gw));
                }
                if rg(*b) {
                    let mut gb = vec![0.0; d_out];
                    for row in g.chunks_exact(d_out) {
                        for (a, v) in gb.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    out.push((*b, gb));
                }
                out
            }
            Op::Bce { pred, dpred } => vec![(*pred, dpred.iter().map(|d| d * g[0]).collect())],
            Op::Gru {
                x,
                w_ih,
                w_hh,
                bias,
                dims,
                reverse,
                cache,
            } => {
                let grads = gru::backward(val(*x), val(*w_ih), val(*w_hh), cache, &g, dims, *reverse);
                vec![(*x, grads.dx), (*w_ih, grads.dw_ih), (*w_hh, grads.dw_hh), (*bias, grads.dbias)]
            }
        }
    }
}

fn time_layout(shape: &[usize]) -> (usize, usize, usize) {
    match shape.len() {
        0 => (1, 0, 1),
        1 => (1, shape[0], 1),
        n => {
            let t = shape[n - 2];
            let c = shape[n - 1];
            (shape[..n - 2].iter().product(), t, c)
        }
    }
}

/// Source segment and blend weight for output frame `j` of an align-corners
/// resampling from `t` to `to` frames.
fn interp_source(j: usize, t: usize, to: usize) -> (usize, f64) {
    if to == 1 {
        return (0, 0.0);
    }
    let num = j * (t - 1);
    let den = to - 1;
    let i0 = num / den;
    if i0 >= t - 1 {
        (t - 2, 1.0)
    } else {
        (i0, (num % den) as f64 / den as f64)
    }
}
