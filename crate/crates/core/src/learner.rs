//! Analysis-by-synthesis maximum likelihood learning.
//!
//! Each iteration advances the synthesized chains by `l` Langevin steps under
//! the current parameters, then moves the parameters along
//!
//! ```text
//! H_obs − H_syn = mean_m ∂f(I_m)/∂w − mean_m ∂f(Ĩ_m)/∂w
//! ```
//!
//! which shifts density from the synthesized sequences toward the observed
//! ones. The same loop drives occlusion recovery (see [`crate::recovery`]),
//! which additionally resamples the occluded pixels of each observed sequence
//! before the synthesis step.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::energy::{ModelConfig, RefKind};
use crate::error::{Error, Result};
use crate::net::{self, NetParams, NetSpec};
use crate::rng::{stream_rng, Stream, StreamRng};
use crate::sampler::{init_chains, run_langevin, ChainInit, ChainState, Model, DEFAULT_NUM_CHAINS};
use crate::tensor::{sq_norm, MaskTensor, VideoTensor};

/// Standard deviation of the initial Gaussian weights.
pub const INIT_WEIGHT_STD: f64 = 0.01;

/// Multiplier of the data scale giving the default Langevin step size.
pub const DEFAULT_EPSILON_FACTOR: f64 = 0.002;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Start from the first layer and activate one more every
    /// `layer_add_every` iterations while still refining the lower ones.
    LayerByLayer,
    EndToEnd,
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layer_by_layer" => Ok(Scheme::LayerByLayer),
            "end_to_end" => Ok(Scheme::EndToEnd),
            other => Err(Error::arg(format!("unknown scheme {other:?}"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::LayerByLayer => "layer_by_layer",
            Scheme::EndToEnd => "end_to_end",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preprocessing {
    MeanSubtract,
    MeanSubtractAndScale,
}

impl FromStr for Preprocessing {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_subtract" => Ok(Preprocessing::MeanSubtract),
            "mean_subtract_and_scale" => Ok(Preprocessing::MeanSubtractAndScale),
            other => Err(Error::arg(format!("unknown preprocessing {other:?}"))),
        }
    }
}

impl fmt::Display for Preprocessing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preprocessing::MeanSubtract => "mean_subtract",
            Preprocessing::MeanSubtractAndScale => "mean_subtract_and_scale",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub langevin_steps: usize,
    pub num_chains: usize,
    pub learning_rate: f64,
    /// Per-layer learning-rate multipliers; empty means `10^-l` for layer `l`
    /// counted from 0.
    pub layer_rate_scales: Vec<f64>,
    pub scheme: Scheme,
    pub layer_add_every: usize,
    /// `None` uses every training video each iteration.
    pub minibatch_size: Option<usize>,
    pub seed: u64,
    pub preprocessing: Preprocessing,
    /// `None` derives `0.002 ×` the per-coordinate standard deviation of the
    /// training data.
    pub epsilon: Option<f64>,
    pub model: ModelConfig,
    /// Divide the learning rate by the iteration number.
    pub lr_decay: bool,
    pub chain_init: ChainInit,
    /// Recovery Langevin steps per iteration; `None` uses `langevin_steps`.
    pub recovery_steps: Option<usize>,
    pub init_weight_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1200,
            langevin_steps: 20,
            num_chains: DEFAULT_NUM_CHAINS,
            learning_rate: 1e-3,
            layer_rate_scales: Vec::new(),
            scheme: Scheme::EndToEnd,
            layer_add_every: 400,
            minibatch_size: None,
            seed: 0,
            preprocessing: Preprocessing::MeanSubtract,
            epsilon: None,
            model: ModelConfig::default(),
            lr_decay: false,
            chain_init: ChainInit::Zeros,
            recovery_steps: None,
            init_weight_std: INIT_WEIGHT_STD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::arg("iterations must be at least 1"));
        }
        if self.langevin_steps == 0 {
            return Err(Error::arg("langevin_steps must be at least 1"));
        }
        if self.num_chains == 0 {
            return Err(Error::arg("num_chains must be at least 1"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::arg("learning_rate must be finite and non-negative"));
        }
        if !self.layer_rate_scales.is_empty() && self.layer_rate_scales.len() != num_layers {
            return Err(Error::arg(format!(
                "layer_rate_scales has {} entries for a {num_layers}-layer net",
                self.layer_rate_scales.len()
            )));
        }
        if self.scheme == Scheme::LayerByLayer && self.layer_add_every == 0 {
            return Err(Error::arg("layer_add_every must be positive"));
        }
        if self.minibatch_size == Some(0) {
            return Err(Error::arg("minibatch_size must be positive"));
        }
        if let Some(e) = self.epsilon {
            if !(e.is_finite() && e >= 0.0) {
                return Err(Error::arg("epsilon must be finite and non-negative"));
            }
        }
        self.model.validate()
    }

    pub fn rate_scales(&self, num_layers: usize) -> Vec<f64> {
        if self.layer_rate_scales.is_empty() {
            (0..num_layers).map(|l| 10f64.powi(-(l as i32))).collect()
        } else {
            self.layer_rate_scales.clone()
        }
    }

    fn chain_init_for(&self) -> ChainInit {
        match &self.chain_init {
            ChainInit::Noise { .. } => ChainInit::Noise { sigma: self.model.sigma },
            other => other.clone(),
        }
    }
}

/// Statistics needed to undo preprocessing at export time.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessStats {
    pub mode: Preprocessing,
    pub channel_means: Vec<f64>,
    pub scale: f64,
}

impl PreprocessStats {
    /// Fits the statistics on `videos`, counting only observed pixels when
    /// masks are given.
    pub fn fit(videos: &[VideoTensor], masks: Option<&[MaskTensor]>, mode: Preprocessing) -> Result<Self> {
        let first = videos.first().ok_or_else(|| Error::arg("no training videos"))?;
        let channels = first.dims().channels;
        let flags: Vec<Vec<bool>> = match masks {
            Some(ms) => {
                if ms.len() != videos.len() {
                    return Err(Error::arg(format!("{} masks for {} videos", ms.len(), videos.len())));
                }
                videos.iter().zip(ms).map(|(v, m)| m.expand(v.dims())).collect::<Result<_>>()?
            }
            None => videos.iter().map(|v| vec![true; v.len()]).collect(),
        };
        let mut sums = vec![0.0; channels];
        let mut counts = vec![0usize; channels];
        for (v, f) in videos.iter().zip(&flags) {
            if v.dims().channels != channels {
                return Err(Error::shape("training videos differ in channel count"));
            }
            for (j, &x) in v.data().iter().enumerate() {
                if f[j] {
                    let (c, ..) = v.dims().coords(j);
                    sums[c] += x;
                    counts[c] += 1;
                }
            }
        }
        if counts.contains(&0) {
            return Err(Error::arg("a channel has no observed pixels"));
        }
        let channel_means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &n)| s / n as f64).collect();
        let scale = match mode {
            Preprocessing::MeanSubtract => 1.0,
            Preprocessing::MeanSubtractAndScale => {
                let (mut ss, mut n) = (0.0, 0usize);
                for (v, f) in videos.iter().zip(&flags) {
                    for (j, &x) in v.data().iter().enumerate() {
                        if f[j] {
                            let (c, ..) = v.dims().coords(j);
                            let d = x - channel_means[c];
                            ss += d * d;
                            n += 1;
                        }
                    }
                }
                let sd = (ss / n as f64).sqrt();
                if sd.is_nan() || sd <= 1e-12 {
                    return Err(Error::arg("degenerate scale: training data is constant"));
                }
                sd
            }
        };
        Ok(Self {
            mode,
            channel_means,
            scale,
        })
    }

    pub fn apply(&self, v: &VideoTensor) -> Result<VideoTensor> {
        self.check_channels(v)?;
        let d = v.dims();
        Ok(VideoTensor::from_fn(d, |c, y, x, t| (v.get(c, y, x, t) - self.channel_means[c]) / self.scale))
    }

    pub fn invert(&self, v: &VideoTensor) -> Result<VideoTensor> {
        self.check_channels(v)?;
        let d = v.dims();
        Ok(VideoTensor::from_fn(d, |c, y, x, t| v.get(c, y, x, t) * self.scale + self.channel_means[c]))
    }

    fn check_channels(&self, v: &VideoTensor) -> Result<()> {
        if v.dims().channels != self.channel_means.len() {
            return Err(Error::shape(format!(
                "stats cover {} channels, video has {}",
                self.channel_means.len(),
                v.dims().channels
            )));
        }
        Ok(())
    }
}

/// Subtracts the per-channel mean over all training videos and, in
/// [`Preprocessing::MeanSubtractAndScale`] mode, divides by the global
/// per-coordinate standard deviation.
pub fn preprocess(videos: &[VideoTensor], mode: Preprocessing) -> Result<(Vec<VideoTensor>, PreprocessStats)> {
    let stats = PreprocessStats::fit(videos, None, mode)?;
    let out = videos.iter().map(|v| stats.apply(v)).collect::<Result<_>>()?;
    Ok((out, stats))
}

/// Root mean square over every coordinate of every video.
pub fn data_scale(videos: &[VideoTensor]) -> f64 {
    let n: usize = videos.iter().map(VideoTensor::len).sum();
    if n == 0 {
        return 0.0;
    }
    let mean = videos.iter().flat_map(|v| v.data()).sum::<f64>() / n as f64;
    let ss: f64 = videos.iter().flat_map(|v| v.data()).map(|x| (x - mean) * (x - mean)).sum();
    (ss / n as f64).sqrt()
}

fn mean_param_grad(spec: &NetSpec, params: &NetParams, videos: &[&VideoTensor]) -> Result<(NetParams, f64)> {
    let per: Vec<(NetParams, f64)> = videos
        .par_iter()
        .map(|v| net::gradients(spec, params, v).map(|g| (g.params, g.score)))
        .collect::<Result<_>>()?;
    let mut acc = params.zeros_like();
    let mut score = 0.0;
    let w = 1.0 / videos.len() as f64;
    for (g, s) in &per {
        acc.add_scaled(w, g)?;
        score += w * s;
    }
    Ok((acc, score))
}

fn estimate_with_scores(
    spec: &NetSpec,
    params: &NetParams,
    observed: &[&VideoTensor],
    synthesized: &[&VideoTensor],
) -> Result<(NetParams, f64, f64)> {
    if observed.is_empty() || synthesized.is_empty() {
        return Err(Error::arg("gradient estimate needs observed and synthesized sequences"));
    }
    let (h_obs, f_obs) = mean_param_grad(spec, params, observed)?;
    let (h_syn, f_syn) = mean_param_grad(spec, params, synthesized)?;
    let mut g = h_obs;
    g.add_scaled(-1.0, &h_syn)?;
    Ok((g, f_obs, f_syn))
}

/// Monte Carlo estimate `H_obs − H_syn` of the log-likelihood gradient.
pub fn estimate_gradient(
    spec: &NetSpec,
    params: &NetParams,
    observed: &[VideoTensor],
    synthesized: &[VideoTensor],
) -> Result<NetParams> {
    let obs: Vec<&VideoTensor> = observed.iter().collect();
    let syn: Vec<&VideoTensor> = synthesized.iter().collect();
    estimate_with_scores(spec, params, &obs, &syn).map(|(g, ..)| g)
}

/// `w ← w + η · scale_l · gradient` for each layer `l < scales.len()`; layers
/// past the end of `scales` are left untouched.
pub fn update_params(params: &NetParams, gradient: &NetParams, eta: f64, scales: &[f64]) -> Result<NetParams> {
    params.check_same_shape(gradient)?;
    if scales.len() > params.layers.len() {
        return Err(Error::shape(format!(
            "{} rate scales for {} layers",
            scales.len(),
            params.layers.len()
        )));
    }
    let mut out = params.clone();
    for ((layer, g), &s) in out.layers.iter_mut().zip(&gradient.layers).zip(scales) {
        let a = eta * s;
        for (w, d) in layer.weights.iter_mut().zip(&g.weights) {
            *w += a * d;
        }
        for (b, d) in layer.biases.iter_mut().zip(&g.biases) {
            *b += a * d;
        }
    }
    Ok(out)
}

/// One row of the per-iteration log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub iteration: usize,
    pub active_layers: usize,
    /// `‖H_obs − H_syn‖` before the update.
    pub grad_norm: f64,
    /// Mean synthesized energy minus mean observed energy.
    pub value: f64,
    /// `‖w‖` after the update.
    pub param_norm: f64,
}

impl Diagnostics {
    pub const CSV_HEADER: &'static str = "iteration,active_layers,grad_norm,value,param_norm";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.12e},{:.12e},{:.12e}",
            self.iteration, self.active_layers, self.grad_norm, self.value, self.param_norm
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: NetParams,
    pub chains: ChainState,
    pub iteration: usize,
    pub active_layers: usize,
    pub epsilon: f64,
    pub diagnostics: Vec<Diagnostics>,
}

/// Observed sequences whose occluded pixels are resampled every iteration.
pub(crate) struct RecoveryTargets {
    pub videos: Vec<VideoTensor>,
    pub masks: Vec<MaskTensor>,
    pub steps: usize,
    pub rngs: Vec<StreamRng>,
}

/// Callback invoked after every iteration.
pub type IterationHook<'a> = dyn FnMut(&TrainState) -> Result<()> + 'a;

/// Number of active layers at (1-based) iteration `t`.
fn active_layers_at(cfg: &TrainConfig, total: usize, t: usize) -> usize {
    match cfg.scheme {
        Scheme::EndToEnd => total,
        Scheme::LayerByLayer => (1 + (t - 1) / cfg.layer_add_every).min(total),
    }
}

struct Minibatcher {
    n: usize,
    size: usize,
    order: Vec<usize>,
    pos: usize,
    rng: StreamRng,
}

impl Minibatcher {
    fn new(n: usize, size: Option<usize>, seed: u64) -> Self {
        let size = size.unwrap_or(n).min(n);
        Self {
            n,
            size,
            order: Vec::new(),
            pos: n,
            rng: stream_rng(seed, 0, Stream::Minibatch),
        }
    }

    /// Without replacement within an epoch; reshuffled when an epoch ends.
    fn next_batch(&mut self) -> Vec<usize> {
        if self.size == self.n {
            return (0..self.n).collect();
        }
        if self.pos >= self.n {
            self.order = (0..self.n).collect();
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + self.size).min(self.n);
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}

/// The shared loop behind [`train`] and recovery training.
pub(crate) fn run_loop(
    spec: &NetSpec,
    observed: &[VideoTensor],
    mut recovery: Option<&mut RecoveryTargets>,
    cfg: &TrainConfig,
    initial_params: Option<NetParams>,
    hook: &mut IterationHook<'_>,
) -> Result<TrainState> {
    let total = spec.layers.len();
    cfg.validate(total)?;
    let dims = observed.first().ok_or_else(|| Error::arg("no training videos"))?.dims();
    if let Some(v) = observed.iter().find(|v| v.dims() != dims) {
        return Err(Error::shape(format!("training videos differ: {} vs {}", v.dims(), dims)));
    }
    spec.geometry(dims)?;

    let params = match initial_params {
        Some(p) => {
            p.check_geometry(&spec.geometry(dims)?)?;
            p
        }
        None => {
            let mut rng = stream_rng(cfg.seed, 0, Stream::ParamInit);
            NetParams::gaussian(spec, dims, cfg.init_weight_std, &mut rng)?
        }
    };
    let epsilon = cfg
        .epsilon
        .unwrap_or_else(|| DEFAULT_EPSILON_FACTOR * data_scale(observed));
    let chains = init_chains(dims, cfg.num_chains, &cfg.chain_init_for(), cfg.seed, epsilon)?;
    let scales = cfg.rate_scales(total);
    let mut batcher = Minibatcher::new(observed.len(), cfg.minibatch_size, cfg.seed);

    let mut state = TrainState {
        params,
        chains,
        iteration: 0,
        active_layers: active_layers_at(cfg, total, 1),
        epsilon,
        diagnostics: Vec::with_capacity(cfg.iterations),
    };

    for t in 1..=cfg.iterations {
        state.active_layers = active_layers_at(cfg, total, t);
        let active_spec = spec.truncated(state.active_layers);
        let model = Model::new(&active_spec, &state.params, &cfg.model);

        if let Some(rec) = recovery.as_deref_mut() {
            let steps = rec.steps;
            rec.videos
                .par_iter_mut()
                .zip(rec.masks.par_iter())
                .zip(rec.rngs.par_iter_mut())
                .try_for_each(|((v, m), rng)| -> Result<()> {
                    if m.occluded_count() > 0 {
                        *v = run_langevin(&model, v, epsilon, steps, rng, Some(m))?;
                    }
                    Ok(())
                })?;
        }

        state.chains.advance(&model, cfg.langevin_steps)?;

        let batch = batcher.next_batch();
        let source: &[VideoTensor] = match recovery.as_deref() {
            Some(rec) => &rec.videos,
            None => observed,
        };
        let obs: Vec<&VideoTensor> = batch.iter().map(|&i| &source[i]).collect();
        let syn: Vec<&VideoTensor> = state.chains.chains.iter().collect();
        let (grad, f_obs, f_syn) = estimate_with_scores(&active_spec, &state.params, &obs, &syn)?;

        let value = mean_reference_energy(&cfg.model, &syn) - f_syn - (mean_reference_energy(&cfg.model, &obs) - f_obs);
        let eta = if cfg.lr_decay {
            cfg.learning_rate / t as f64
        } else {
            cfg.learning_rate
        };
        state.params = update_params(&state.params, &grad, eta, &scales[..state.active_layers])?;
        if !state.params.is_finite() {
            return Err(Error::Numerical(format!("non-finite parameters after iteration {t}")));
        }
        state.iteration = t;
        state.diagnostics.push(Diagnostics {
            iteration: t,
            active_layers: state.active_layers,
            grad_norm: grad.norm(),
            value,
            param_norm: state.params.norm(),
        });
        log::debug!(
            "iter {t}: |H_obs - H_syn| = {:.4e}, V = {:.4e}",
            grad.norm(),
            value
        );
        hook(&state)?;
    }
    Ok(state)
}

fn mean_reference_energy(cfg: &ModelConfig, videos: &[&VideoTensor]) -> f64 {
    match cfg.ref_kind {
        RefKind::Uniform => 0.0,
        RefKind::Gaussian => {
            let s2 = cfg.sigma * cfg.sigma;
            videos.iter().map(|v| sq_norm(v) / (2.0 * s2)).sum::<f64>() / videos.len() as f64
        }
    }
}

/// Learns the model from (already preprocessed) training videos.
pub fn train(spec: &NetSpec, videos: &[VideoTensor], cfg: &TrainConfig) -> Result<TrainState> {
    run_loop(spec, videos, None, cfg, None, &mut |_| Ok(()))
}

/// [`train`] with a callback after every iteration (checkpointing, logging)
/// and optional starting parameters.
pub fn train_with_hook(
    spec: &NetSpec,
    videos: &[VideoTensor],
    cfg: &TrainConfig,
    initial_params: Option<NetParams>,
    hook: &mut IterationHook<'_>,
) -> Result<TrainState> {
    run_loop(spec, videos, None, cfg, initial_params, hook)
}
