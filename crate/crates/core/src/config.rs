//! Line-based `key=value` run configuration with `#` comments.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::energy::RefKind;
use crate::error::{Error, Result};
use crate::learner::TrainConfig;
use crate::net::{LayerSpec, NetSpec};
use crate::sampler::ChainInit;

/// Network plus learning settings for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub layers: Vec<LayerSpec>,
    /// Must match the data when set; otherwise taken from the data.
    pub input_channels: Option<usize>,
    pub train: TrainConfig,
    /// Write a checkpoint every N iterations; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl RunConfig {
    /// The network for videos with `channels` channels.
    pub fn net_for(&self, channels: usize) -> Result<NetSpec> {
        if let Some(c) = self.input_channels {
            if c != channels {
                return Err(Error::shape(format!("config expects {c} input channels, data has {channels}")));
            }
        }
        if self.layers.is_empty() {
            return Err(Error::arg("config defines no layers"));
        }
        Ok(NetSpec::new(channels, self.layers.clone()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig {
            layers: Vec::new(),
            input_channels: None,
            train: TrainConfig::default(),
            checkpoint_every: 0,
        };
        let mut preset_line = None;
        let mut layer_line = None;
        let mut sigma = None;
        let mut chain_noise = false;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = n + 1;
            let err = |message: String| Error::Config { line: lineno, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, found {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |e: Error| err(format!("{key}: {e}"));
            let t = &mut cfg.train;
            match key {
                "preset" => {
                    if layer_line.is_some() {
                        return Err(err("preset cannot be combined with layer lines".into()));
                    }
                    cfg.layers = NetSpec::preset(value).map_err(bad)?.layers;
                    preset_line = Some(lineno);
                }
                "layer" => {
                    if preset_line.is_some() {
                        return Err(err("layer lines cannot be combined with preset".into()));
                    }
                    cfg.layers.push(value.parse().map_err(bad)?);
                    layer_line = Some(lineno);
                }
                "input_channels" => cfg.input_channels = Some(num(value).map_err(bad)?),
                "iterations" => t.iterations = num(value).map_err(bad)?,
                "langevin_steps" => t.langevin_steps = num(value).map_err(bad)?,
                "num_chains" => t.num_chains = num(value).map_err(bad)?,
                "learning_rate" => t.learning_rate = num(value).map_err(bad)?,
                "layer_rate_scales" => {
                    t.layer_rate_scales = value
                        .split(',')
                        .map(|s| num(s.trim()))
                        .collect::<Result<_>>()
                        .map_err(bad)?
                }
                "scheme" => t.scheme = value.parse().map_err(bad)?,
                "layer_add_every" => t.layer_add_every = num(value).map_err(bad)?,
                "minibatch_size" => {
                    t.minibatch_size = match value {
                        "all" => None,
                        v => Some(num(v).map_err(bad)?),
                    }
                }
                "seed" => t.seed = num(value).map_err(bad)?,
                "epsilon" => {
                    t.epsilon = match value {
                        "auto" => None,
                        v => Some(num(v).map_err(bad)?),
                    }
                }
                "ref_kind" => t.model.ref_kind = value.parse().map_err(bad)?,
                "sigma" => sigma = Some(num(value).map_err(bad)?),
                "preprocessing" => t.preprocessing = value.parse().map_err(bad)?,
                "chain_init" => match value {
                    "zeros" => chain_noise = false,
                    "noise" => chain_noise = true,
                    other => return Err(err(format!("chain_init: expected zeros or noise, found {other:?}"))),
                },
                "recovery_steps" => {
                    t.recovery_steps = match value {
                        "auto" => None,
                        v => Some(num(v).map_err(bad)?),
                    }
                }
                "lr_decay" => t.lr_decay = num(value).map_err(bad)?,
                "init_weight_std" => t.init_weight_std = num(value).map_err(bad)?,
                "checkpoint_every" => cfg.checkpoint_every = num(value).map_err(bad)?,
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        if let Some(s) = sigma {
            cfg.train.model.sigma = s;
        }
        if cfg.train.model.ref_kind == RefKind::Uniform && sigma.is_some() {
            log::warn!("sigma is ignored with ref_kind=uniform");
        }
        if chain_noise {
            cfg.train.chain_init = ChainInit::Noise { sigma: cfg.train.model.sigma };
        }
        cfg.train
            .validate(cfg.layers.len())
            .map_err(|e| Error::Config { line: 0, message: e.to_string() })?;
        Ok(cfg)
    }

    /// Text form accepted by [`RunConfig::parse`]; layers are written out
    /// explicitly.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        if let Some(c) = self.input_channels {
            let _ = writeln!(s, "input_channels={c}");
        }
        for l in &self.layers {
            let _ = writeln!(s, "layer={l}");
        }
        let _ = writeln!(s, "iterations={}", t.iterations);
        let _ = writeln!(s, "langevin_steps={}", t.langevin_steps);
        let _ = writeln!(s, "num_chains={}", t.num_chains);
        let _ = writeln!(s, "learning_rate={:?}", t.learning_rate);
        if !t.layer_rate_scales.is_empty() {
            let list: Vec<String> = t.layer_rate_scales.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "layer_rate_scales={}", list.join(","));
        }
        let _ = writeln!(s, "scheme={}", t.scheme);
        let _ = writeln!(s, "layer_add_every={}", t.layer_add_every);
        let _ = writeln!(s, "minibatch_size={}", t.minibatch_size.map_or("all".into(), |m| m.to_string()));
        let _ = writeln!(s, "seed={}", t.seed);
        let _ = writeln!(s, "epsilon={}", t.epsilon.map_or("auto".into(), |e| format!("{e:?}")));
        let _ = writeln!(s, "ref_kind={}", t.model.ref_kind);
        let _ = writeln!(s, "sigma={:?}", t.model.sigma);
        let _ = writeln!(s, "preprocessing={}", t.preprocessing);
        let init = match t.chain_init {
            ChainInit::Noise { .. } => "noise",
            _ => "zeros",
        };
        let _ = writeln!(s, "chain_init={init}");
        let _ = writeln!(s, "recovery_steps={}", t.recovery_steps.map_or("auto".into(), |k| k.to_string()));
        let _ = writeln!(s, "lr_decay={}", t.lr_decay);
        let _ = writeln!(s, "init_weight_std={:?}", t.init_weight_std);
        let _ = writeln!(s, "checkpoint_every={}", self.checkpoint_every);
        s
    }
}

fn num<T: FromStr>(v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::arg(format!("cannot parse {v:?}")))
}

/// Commented configuration for one of the preset architectures.
pub fn template(preset: &str) -> Result<String> {
    let spec = NetSpec::preset(preset)?;
    let cfg = RunConfig {
        layers: spec.layers,
        input_channels: Some(spec.input_channels),
        train: TrainConfig::default(),
        checkpoint_every: 100,
    };
    let mut s = format!("# {preset} architecture\n");
    s.push_str("# scheme: end_to_end | layer_by_layer\n");
    s.push_str("# preprocessing: mean_subtract | mean_subtract_and_scale\n");
    s.push_str("# epsilon, recovery_steps: a number or auto\n");
    s.push_str(&cfg.to_text());
    Ok(s)
}
