//! Hourglass encoder-decoder with one recurrent classifier branch per scale.

use adamd_numerics::{Padding, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Frames per input segment.
    pub tau: usize,
    /// Feature dimension (mel bands).
    pub d: usize,
    /// Number of scales, i.e. hourglass levels.
    pub depth: usize,
    pub channels: usize,
    /// Inner width of the bottleneck residual blocks.
    pub mid_channels: usize,
    /// Hidden size per direction for each scale, coarsest first.
    pub gru_hidden: Vec<usize>,
    pub gru_layers: usize,
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            tau: 512,
            d: 128,
            depth: 4,
            channels: 32,
            mid_channels: 16,
            gru_hidden: vec![32, 32, 64, 64],
            gru_layers: 3,
            classes: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |r: String| Err(Error::invalid("model config", r));
        if self.depth < 2 {
            return bad(format!("depth must be at least 2, got {}", self.depth));
        }
        let unit = self.unit();
        if self.tau == 0 || self.d == 0 || self.tau % unit != 0 || self.d % unit != 0 {
            return bad(format!("tau = {} and d = {} must be positive multiples of {unit}", self.tau, self.d));
        }
        if self.tau / unit < 2 {
            return bad(format!("tau = {} leaves fewer than 2 frames at the coarsest scale", self.tau));
        }
        if self.gru_hidden.len() != self.depth {
            return bad(format!("{} GRU hidden sizes for {} scales", self.gru_hidden.len(), self.depth));
        }
        if self.channels == 0 || self.mid_channels == 0 || self.gru_layers == 0 || self.classes == 0 {
            return bad("channels, mid_channels, gru_layers and classes must be positive".into());
        }
        if self.gru_hidden.contains(&0) {
            return bad("GRU hidden sizes must be positive".into());
        }
        Ok(())
    }

    /// Frame and feature counts must be multiples of this.
    pub fn unit(&self) -> usize {
        1 << (self.depth - 1)
    }

    /// Time upsampling factor of scale `k` (0-based, coarsest first).
    pub fn factor(&self, k: usize) -> usize {
        1 << (self.depth - 1 - k)
    }

    /// `(frames, features)` of the hourglass tap feeding scale `k`.
    pub fn tap_shape(&self, k: usize) -> (usize, usize) {
        (self.tau / self.factor(k), self.d / self.factor(k))
    }

    pub fn gru_input(&self, k: usize) -> usize {
        self.tap_shape(k).1
    }

    /// The same network applied to a segment of a different length.
    pub fn with_tau(&self, tau: usize) -> ModelConfig {
        ModelConfig { tau, ..self.clone() }
    }

    /// `key=value` lines, used in checkpoints and resolved configs.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let hidden = self.gru_hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("tau".into(), self.tau.to_string()),
            ("d".into(), self.d.to_string()),
            ("depth".into(), self.depth.to_string()),
            ("channels".into(), self.channels.to_string()),
            ("mid_channels".into(), self.mid_channels.to_string()),
            ("gru_hidden".into(), hidden),
            ("gru_layers".into(), self.gru_layers.to_string()),
            ("classes".into(), self.classes.to_string()),
        ]
    }
}

/// Residual blocks in order: encoder levels, bottleneck, then decoder levels.
fn residual_count(depth: usize) -> usize {
    2 * depth - 1
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(|i| &mut self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub(crate) fn from_parts(names: Vec<String>, tensors: Vec<Tensor>) -> Self {
        ModelParams { names, tensors }
    }
}

/// The parameter layout of a configuration: names and shapes with fan-in.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, usize)> {
    let n = cfg.channels;
    let m = cfg.mid_channels;
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, fan_in: usize| out.push((name, shape, fan_in));
    push("stem.w".into(), vec![n, 1, 3, 3], 9);
    push("stem.b".into(), vec![n], 0);
    for r in 0..residual_count(cfg.depth) {
        push(format!("res{r}.c1.w"), vec![m, n, 1, 1], n);
        push(format!("res{r}.c1.b"), vec![m], 0);
        push(format!("res{r}.c2.w"), vec![m, m, 3, 3], 9 * m);
        push(format!("res{r}.c2.b"), vec![m], 0);
        push(format!("res{r}.c3.w"), vec![n, m, 1, 1], m);
        push(format!("res{r}.c3.b"), vec![n], 0);
    }
    for k in 0..cfg.depth {
        let h = cfg.gru_hidden[k];
        push(format!("branch{k}.conv.w"), vec![1, n, 3, 3], 9 * n);
        push(format!("branch{k}.conv.b"), vec![1], 0);
        for l in 0..cfg.gru_layers {
            let input = if l == 0 { cfg.gru_input(k) } else { 2 * h };
            for dir in ["fwd", "bwd"] {
                push(format!("branch{k}.gru{l}.{dir}.w_ih"), vec![input, 3 * h], input);
                push(format!("branch{k}.gru{l}.{dir}.w_hh"), vec![h, 3 * h], h);
                push(format!("branch{k}.gru{l}.{dir}.b"), vec![3 * h], 0);
            }
        }
        push(format!("branch{k}.out.w"), vec![2 * h, cfg.classes], 2 * h);
        push(format!("branch{k}.out.b"), vec![cfg.classes], 0);
    }
    out
}

/// Parameter count of a configuration without allocating it.
pub fn param_count(cfg: &ModelConfig) -> usize {
    layout(cfg).iter().map(|(_, s, _)| s.iter().product::<usize>()).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// Parameters bound to a tape.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Outputs of one forward pass.
pub struct Forward {
    pub bound: Bound,
    /// Hourglass taps `[B, N, τ_k, d_k]`, coarsest first.
    pub taps: Vec<Var>,
    /// Per-scale probabilities `[B, τ, C]`, coarsest first.
    pub preds: Vec<Var>,
}

impl Model {
    /// Normal initialization with standard deviation `1/sqrt(fan_in)`; biases start at zero.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Model> {
        config.validate()?;
        let (names, tensors) = layout(&config)
            .into_iter()
            .map(|(name, shape, fan_in)| {
                let t = if fan_in == 0 {
                    Tensor::zeros(&shape)
                } else {
                    Tensor::randn(&shape, 1.0 / (fan_in as f64).sqrt(), rng)
                };
                (name, t)
            })
            .unzip();
        Ok(Model {
            config,
            params: ModelParams { names, tensors },
        })
    }

    /// Wraps existing parameters after checking them against the layout.
    pub fn from_params(config: ModelConfig, params: ModelParams) -> Result<Model> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != params.names.len() {
            return Err(Error::invalid(
                "model params",
                format!("expected {} tensors, got {}", expected.len(), params.names.len()),
            ));
        }
        for ((name, shape, _), (got_name, t)) in expected.iter().zip(params.iter()) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(Error::invalid(
                    "model params",
                    format!("expected {name} {shape:?}, got {got_name} {:?}", t.shape()),
                ));
            }
            if !t.is_finite() {
                return Err(Error::invalid("model params", format!("{name} has non-finite values")));
            }
        }
        Ok(Model { config, params })
    }

    /// Records every parameter on the tape, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self.params.tensors.iter().map(|t| tape.leaf(t.clone(), trainable)).collect();
        Bound { vars }
    }

    fn var(&self, b: &Bound, name: &str) -> Var {
        b.vars[self.params.index_of(name).unwrap_or_else(|| panic!("no parameter {name}"))]
    }

    fn conv(&self, tape: &mut Tape, b: &Bound, x: Var, name: &str) -> Result<Var> {
        let y = tape.conv2d(x, self.var(b, &format!("{name}.w")), Padding::Same)?;
        Ok(tape.bias_channels(y, self.var(b, &format!("{name}.b")))?)
    }

    /// Pre-activation bottleneck: `x + c3(relu(c2(relu(c1(relu(x))))))`.
    pub fn residual_block(&self, tape: &mut Tape, b: &Bound, index: usize, x: Var) -> Result<Var> {
        let n = self.config.channels;
        let c = tape.shape(x).get(tape.shape(x).len().wrapping_sub(3)).copied();
        if c != Some(n) {
            return Err(Error::invalid(
                "residual block input",
                format!("expected {n} channels, got shape {:?}", tape.shape(x)),
            ));
        }
        let mut y = tape.relu(x);
        y = self.conv(tape, b, y, &format!("res{index}.c1"))?;
        y = tape.relu(y);
        y = self.conv(tape, b, y, &format!("res{index}.c2"))?;
        y = tape.relu(y);
        y = self.conv(tape, b, y, &format!("res{index}.c3"))?;
        Ok(tape.add(x, y)?)
    }

    /// Hourglass over `[B, 1, τ, d]`; returns the K taps, coarsest first.
    pub fn hourglass(&self, tape: &mut Tape, b: &Bound, x: Var) -> Result<Vec<Var>> {
        let depth = self.config.depth;
        let shape = tape.shape(x).to_vec();
        let unit = self.config.unit();
        let ok = matches!(shape[..], [_, 1, t, d] if t % unit == 0 && d == self.config.d && t / unit >= 2);
        if !ok {
            return Err(Error::invalid(
                "hourglass input",
                format!("expected [B, 1, τ, {}] with τ a multiple of {unit}, got {shape:?}", self.config.d),
            ));
        }
        let mut h = self.conv(tape, b, x, "stem")?;
        let mut skips = Vec::with_capacity(depth - 1);
        for level in 0..depth - 1 {
            h = self.residual_block(tape, b, level, h)?;
            skips.push(h);
            h = tape.maxpool2d(h)?;
        }
        h = self.residual_block(tape, b, depth - 1, h)?;
        let mut taps = vec![h];
        for (j, skip) in skips.into_iter().rev().enumerate() {
            let up = tape.upsample_nearest2d(h)?;
            let merged = tape.add(up, skip)?;
            h = self.residual_block(tape, b, depth + j, merged)?;
            taps.push(h);
        }
        Ok(taps)
    }

    /// Recurrent head of scale `k` on a `[B, τ_k, d_k]` sequence: stacked
    /// bidirectional GRU, per-frame dense layer and sigmoid, `[B, τ_k, C]`.
    pub fn branch_head(&self, tape: &mut Tape, b: &Bound, k: usize, seq: Var) -> Result<Var> {
        let mut h = seq;
        for l in 0..self.config.gru_layers {
            let p = |dir: &str, part: &str| self.var(b, &format!("branch{k}.gru{l}.{dir}.{part}"));
            let fwd = tape.gru(h, p("fwd", "w_ih"), p("fwd", "w_hh"), p("fwd", "b"), false)?;
            let bwd = tape.gru(h, p("bwd", "w_ih"), p("bwd", "w_hh"), p("bwd", "b"), true)?;
            h = tape.concat_last(fwd, bwd)?;
        }
        let logits = tape.dense(h, self.var(b, &format!("branch{k}.out.w")), self.var(b, &format!("branch{k}.out.b")))?;
        Ok(tape.sigmoid(logits))
    }

    /// Scale `k` branch from its hourglass tap to `[B, τ, C]` probabilities.
    pub fn branch(&self, tape: &mut Tape, b: &Bound, k: usize, tap: Var) -> Result<Var> {
        let shape = tape.shape(tap).to_vec();
        let [batch, _, t, f] = shape[..] else {
            return Err(Error::invalid("branch input", format!("expected [B, N, τ_k, d_k], got {shape:?}")));
        };
        let reduced = self.conv(tape, b, tap, &format!("branch{k}.conv"))?;
        let seq = tape.reshape(reduced, &[batch, t, f])?;
        let p = self.branch_head(tape, b, k, seq)?;
        let factor = self.config.factor(k);
        if factor == 1 {
            Ok(p)
        } else {
            Ok(tape.upsample_linear_time(p, factor)?)
        }
    }

    /// Uses caller-recorded variables as the parameters, in layout order.
    pub fn bind_vars(&self, tape: &Tape, vars: Vec<Var>) -> Result<Bound> {
        if vars.len() != self.params.tensors.len() {
            return Err(Error::invalid(
                "bound params",
                format!("expected {} variables, got {}", self.params.tensors.len(), vars.len()),
            ));
        }
        for ((name, t), &v) in self.params.iter().zip(&vars) {
            if tape.shape(v) != t.shape() {
                return Err(Error::invalid(
                    "bound params",
                    format!("{name} expects {:?}, got {:?}", t.shape(), tape.shape(v)),
                ));
            }
        }
        Ok(Bound { vars })
    }

    /// Forward pass over a batch `[B, 1, τ, d]` already recorded on `tape`.
    pub fn forward_var(&self, tape: &mut Tape, x: Var, trainable: bool) -> Result<Forward> {
        let bound = self.bind(tape, trainable);
        self.forward_bound(tape, bound, x)
    }

    pub fn forward_bound(&self, tape: &mut Tape, bound: Bound, x: Var) -> Result<Forward> {
        let taps = self.hourglass(tape, &bound, x)?;
        let preds = taps
            .iter()
            .enumerate()
            .map(|(k, &tap)| self.branch(tape, &bound, k, tap))
            .collect::<Result<Vec<_>>>()?;
        Ok(Forward { bound, taps, preds })
    }

    /// Inference on one `[τ, d]` matrix; τ may differ from the configured
    /// segment length but must be a multiple of `unit()`. Returns K `[τ, C]`
    /// probability tensors, coarsest first.
    pub fn predict(&self, features: &Tensor) -> Result<Vec<Tensor>> {
        let [t, d] = features.shape()[..] else {
            return Err(Error::invalid("features", format!("expected [τ, d], got {:?}", features.shape())));
        };
        let mut tape = Tape::new();
        let x = tape.constant(features.clone().reshape(&[1, 1, t, d])?);
        let fwd = self.forward_var(&mut tape, x, false)?;
        fwd.preds
            .iter()
            .map(|&p| Ok(tape.value(p).clone().reshape(&[t, self.config.classes])?))
            .collect()
    }
}
