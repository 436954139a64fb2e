//! Langevin dynamics over persistent chains and its zero-temperature limit.
//!
//! One step moves `I ← I − (ε²/2)·∂E/∂I + ε·Z` with `Z` standard normal per
//! coordinate. With the Gaussian reference at σ = 1 the drift is the
//! reconstruction error `I − B`. No Metropolis-Hastings correction is applied.

use std::path::PathBuf;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::energy::{energy_and_grad, ModelConfig};
use crate::error::{Error, Result};
use crate::net::{NetParams, NetSpec};
use crate::rng::{stream_rng, Stream, StreamRng};
use crate::tensor::{read_stv, Dims, MaskTensor, VideoTensor};

pub const DEFAULT_NUM_CHAINS: usize = 3;

/// Borrowed view of a model: architecture, parameters and reference.
#[derive(Debug, Clone, Copy)]
pub struct Model<'a> {
    pub spec: &'a NetSpec,
    pub params: &'a NetParams,
    pub config: &'a ModelConfig,
}

impl<'a> Model<'a> {
    pub fn new(spec: &'a NetSpec, params: &'a NetParams, config: &'a ModelConfig) -> Self {
        Self { spec, params, config }
    }

    pub fn energy(&self, video: &VideoTensor) -> Result<f64> {
        crate::energy::energy(self.spec, self.params, self.config, video)
    }

    pub fn energy_and_grad(&self, video: &VideoTensor) -> Result<(f64, VideoTensor)> {
        energy_and_grad(self.spec, self.params, self.config, video)
    }
}

/// Core update with an explicit noise source; `noise` is called once per
/// updated coordinate in flat index order.
pub fn langevin_step_with_noise(
    model: &Model<'_>,
    chain: &VideoTensor,
    epsilon: f64,
    mask: Option<&MaskTensor>,
    mut noise: impl FnMut() -> f64,
) -> Result<VideoTensor> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::arg(format!("step size must be finite and non-negative, got {epsilon}")));
    }
    let observed = mask.map(|m| m.expand(chain.dims())).transpose()?;
    if epsilon == 0.0 {
        return Ok(chain.clone());
    }
    let (_, grad) = model.energy_and_grad(chain)?;
    let half = 0.5 * epsilon * epsilon;
    let mut out = chain.clone();
    for (j, (x, g)) in out.data_mut().iter_mut().zip(grad.data()).enumerate() {
        if observed.as_ref().is_some_and(|o| o[j]) {
            continue;
        }
        *x = *x - half * g + epsilon * noise();
    }
    out.ensure_finite("langevin step")?;
    Ok(out)
}

/// One Langevin step. With a mask, observed coordinates (mask = 1) are left
/// bit-unchanged and draw no noise.
pub fn langevin_step<R: Rng + ?Sized>(
    model: &Model<'_>,
    chain: &VideoTensor,
    epsilon: f64,
    rng: &mut R,
    mask: Option<&MaskTensor>,
) -> Result<VideoTensor> {
    langevin_step_with_noise(model, chain, epsilon, mask, || rng.sample(StandardNormal))
}

/// `steps` sequential Langevin steps starting from `chain`.
pub fn run_langevin<R: Rng + ?Sized>(
    model: &Model<'_>,
    chain: &VideoTensor,
    epsilon: f64,
    steps: usize,
    rng: &mut R,
    mask: Option<&MaskTensor>,
) -> Result<VideoTensor> {
    let mut cur = chain.clone();
    for _ in 0..steps {
        cur = langevin_step(model, &cur, epsilon, rng, mask)?;
    }
    Ok(cur)
}

/// Noise-free step `I ← I − (ε²/2)·∂E/∂I`.
pub fn gradient_descent_step(model: &Model<'_>, chain: &VideoTensor, epsilon: f64) -> Result<VideoTensor> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::arg(format!("step size must be positive, got {epsilon}")));
    }
    langevin_step_with_noise(model, chain, epsilon, None, || 0.0)
}

#[derive(Debug, Clone)]
pub struct Descent {
    pub point: VideoTensor,
    pub energies: Vec<f64>,
    pub converged: bool,
}

/// Repeated [`gradient_descent_step`] with backtracking: a step that raises
/// the energy is discarded and ε is halved. Stops once `‖∂E/∂I‖ ≤ tol` (a
/// fixed point; `I = B` for the Gaussian reference at σ = 1) or after
/// `max_steps`.
pub fn descend(model: &Model<'_>, start: &VideoTensor, epsilon: f64, tol: f64, max_steps: usize) -> Result<Descent> {
    let mut eps = epsilon;
    let mut point = start.clone();
    let (mut e, mut grad) = model.energy_and_grad(&point)?;
    let mut energies = vec![e];
    for _ in 0..max_steps {
        if crate::tensor::sq_norm(&grad).sqrt() <= tol {
            return Ok(Descent { point, energies, converged: true });
        }
        let next = gradient_descent_step(model, &point, eps)?;
        let (e_next, g_next) = model.energy_and_grad(&next)?;
        // energy differences below roundoff of |E| are not increases
        if e_next > e + 1e-13 * e.abs().max(1.0) {
            eps *= 0.5;
            if eps < 1e-12 {
                break;
            }
            continue;
        }
        point = next;
        e = e_next;
        grad = g_next;
        energies.push(e);
    }
    let converged = crate::tensor::sq_norm(&grad).sqrt() <= tol;
    Ok(Descent { point, energies, converged })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChainInit {
    /// iid `N(0, σ²)` draws from each chain's own stream.
    Noise { sigma: f64 },
    Zeros,
    FromFiles(Vec<PathBuf>),
}

/// Persistent synthesized sequences, each with its own derived RNG stream.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub chains: Vec<VideoTensor>,
    pub rngs: Vec<StreamRng>,
    pub step_size: f64,
}

/// Creates `count` chains of shape `dims`. Chain `m` draws from the stream
/// seeded with `seed ⊕ m`.
pub fn init_chains(dims: Dims, count: usize, init: &ChainInit, seed: u64, step_size: f64) -> Result<ChainState> {
    if count == 0 {
        return Err(Error::arg("need at least one chain"));
    }
    let mut rngs: Vec<StreamRng> = (0..count as u64).map(|m| stream_rng(seed, m, Stream::Chain)).collect();
    let chains = match init {
        ChainInit::Zeros => vec![VideoTensor::zeros(dims); count],
        ChainInit::Noise { sigma } => rngs
            .iter_mut()
            .map(|rng| {
                VideoTensor::from_fn(dims, |_, _, _, _| sigma * rng.sample::<f64, _>(StandardNormal))
            })
            .collect(),
        ChainInit::FromFiles(paths) => {
            if paths.len() != count {
                return Err(Error::arg(format!("{} chain files for {count} chains", paths.len())));
            }
            let mut out = Vec::with_capacity(count);
            for p in paths {
                let v = read_stv(p)?;
                if v.dims() != dims {
                    return Err(Error::shape(format!("{}: dims {} vs {}", p.display(), v.dims(), dims)));
                }
                out.push(v);
            }
            out
        }
    };
    Ok(ChainState { chains, rngs, step_size })
}

impl ChainState {
    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }

    /// Runs `steps` Langevin steps on every chain from its current state.
    /// Chains step in parallel; each consumes only its own stream.
    pub fn advance(&mut self, model: &Model<'_>, steps: usize) -> Result<()> {
        let eps = self.step_size;
        self.chains
            .par_iter_mut()
            .zip(self.rngs.par_iter_mut())
            .try_for_each(|(chain, rng)| -> Result<()> {
                *chain = run_langevin(model, chain, eps, steps, rng, None)?;
                Ok(())
            })
    }
}
