//! Binary checkpoints.
//!
//! Layout, little-endian: magic `ADMD`, `u32` version, `u32` length and
//! UTF-8 text of `key=value` config lines, `u32` tensor count, then per
//! tensor a `u32`-prefixed name, `u32` rank, `u64` dims and `f64` data.
//! Fusion weights are stored as the tensors `fusion.w` and `fusion.v`.

use std::path::Path;

use adamd_numerics::Tensor;

use crate::binio::{put_string, put_u32, put_u64, Reader};
use crate::error::{Error, Result};
use crate::features::FeatureParams;
use crate::fusion::FusionWeights;
use crate::model::{Model, ModelConfig, ModelParams};

const MAGIC: &[u8; 4] = b"ADMD";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub fusion: FusionWeights,
    pub features: FeatureParams,
    pub class_names: Vec<String>,
}

fn config_text(c: &Checkpoint) -> String {
    let mut pairs = c.model.config.to_pairs();
    let f = &c.features;
    pairs.extend([
        ("feature.win_s".into(), f.win_s.to_string()),
        ("feature.hop_s".into(), f.hop_s.to_string()),
        ("feature.n_fft".into(), f.n_fft.to_string()),
        ("feature.n_mels".into(), f.n_mels.to_string()),
        ("feature.segment_len".into(), f.segment_len.to_string()),
        ("feature.step_fraction".into(), f.step_fraction.to_string()),
        ("class_names".into(), c.class_names.join(",")),
    ]);
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn save_checkpoint(path: impl AsRef<Path>, c: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_string(&mut out, &config_text(c));
    let fusion_w = Tensor::from_vec(c.fusion.w.clone());
    let fusion_v = Tensor::from_vec(c.fusion.v.clone());
    let tensors: Vec<(&str, &Tensor)> = c.model.params.iter().chain([("fusion.w", &fusion_w), ("fusion.v", &fusion_v)]).collect();
    put_u32(&mut out, tensors.len() as u32);
    for (name, t) in tensors {
        put_string(&mut out, name);
        put_u32(&mut out, t.rank() as u32);
        for &d in t.shape() {
            put_u64(&mut out, d as u64);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn parse_config(text: &str, path: &Path) -> Result<(ModelConfig, FeatureParams, Vec<String>)> {
    let mut model = ModelConfig::default();
    let mut feat = FeatureParams::default();
    let mut names = Vec::new();
    let bad = |k: &str, v: &str| Error::format(path, format!("bad checkpoint config entry {k}={v}"));
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(line, ""))?;
        let int = || v.parse::<usize>().map_err(|_| bad(k, v));
        let float = || v.parse::<f64>().map_err(|_| bad(k, v));
        match k {
            "tau" => model.tau = int()?,
            "d" => model.d = int()?,
            "depth" => model.depth = int()?,
            "channels" => model.channels = int()?,
            "mid_channels" => model.mid_channels = int()?,
            "gru_hidden" => model.gru_hidden = v.split(',').map(|h| h.parse().map_err(|_| bad(k, v))).collect::<Result<_>>()?,
            "gru_layers" => model.gru_layers = int()?,
            "classes" => model.classes = int()?,
            "feature.win_s" => feat.win_s = float()?,
            "feature.hop_s" => feat.hop_s = float()?,
            "feature.n_fft" => feat.n_fft = int()?,
            "feature.n_mels" => feat.n_mels = int()?,
            "feature.segment_len" => feat.segment_len = int()?,
            "feature.step_fraction" => feat.step_fraction = float()?,
            "class_names" => names = v.split(',').filter(|s| !s.is_empty()).map(String::from).collect(),
            _ => return Err(bad(k, v)),
        }
    }
    Ok((model, feat, names))
}

/// Loads a checkpoint; with `expected`, a differing model config is rejected.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&bytes, path);
    if r.take(4)? != MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let (config, features, class_names) = parse_config(&r.string()?, path)?;
    if let Some(exp) = expected {
        if exp != &config {
            return Err(Error::Config(format!(
                "checkpoint {} was trained with {config:?}, expected {exp:?}",
                path.display()
            )));
        }
    }
    let count = r.u32()? as usize;
    let mut names = Vec::with_capacity(count);
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        names.push(r.string()?);
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let data = r.f64s(shape.iter().product())?;
        tensors.push(Tensor::new(&shape, data)?);
    }
    r.finish()?;
    let mut take = |name: &str| -> Result<Vec<f64>> {
        let i = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::format(path, format!("missing tensor {name}")))?;
        names.remove(i);
        Ok(tensors.remove(i).into_data())
    };
    let w = take("fusion.w")?;
    let v = take("fusion.v")?;
    if w.len() != config.depth || v.len() != config.depth {
        return Err(Error::format(path, "fusion weights do not match the number of scales"));
    }
    let model = Model::from_params(config, ModelParams::from_parts(names, tensors)).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(Checkpoint {
        model,
        fusion: FusionWeights { w, v },
        features,
        class_names,
    })
}
