//! Unnormalized model density `p(I) ∝ exp(f(I; w)) q(I)` and its energy.
//!
//! Neither the normalizer of the reference `q` nor `Z(w)` is ever computed:
//! every quantity here is defined up to an additive constant.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::net::{self, NetParams, NetSpec};
use crate::tensor::{sq_norm, VideoTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefKind {
    /// Gaussian white noise with standard deviation `sigma`.
    Gaussian,
    /// Flat reference; the energy is `−f` alone.
    Uniform,
}

impl FromStr for RefKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(RefKind::Gaussian),
            "uniform" => Ok(RefKind::Uniform),
            other => Err(Error::arg(format!("unknown ref_kind {other:?}"))),
        }
    }
}

impl fmt::Display for RefKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RefKind::Gaussian => "gaussian",
            RefKind::Uniform => "uniform",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub ref_kind: RefKind,
    pub sigma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            ref_kind: RefKind::Gaussian,
            sigma: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn gaussian(sigma: f64) -> Self {
        Self {
            ref_kind: RefKind::Gaussian,
            sigma,
        }
    }

    pub fn uniform() -> Self {
        Self {
            ref_kind: RefKind::Uniform,
            sigma: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::arg(format!("sigma must be finite and positive, got {}", self.sigma)));
        }
        Ok(())
    }

    /// `‖I‖²/(2σ²)` for the Gaussian reference, 0 for the uniform one.
    fn reference_energy(&self, video: &VideoTensor) -> f64 {
        match self.ref_kind {
            RefKind::Gaussian => sq_norm(video) / (2.0 * self.sigma * self.sigma),
            RefKind::Uniform => 0.0,
        }
    }
}

/// `f(I; w) − ‖I‖²/(2σ²)` (Gaussian) or `f(I; w)` (uniform).
pub fn log_unnormalized_density(spec: &NetSpec, params: &NetParams, cfg: &ModelConfig, video: &VideoTensor) -> Result<f64> {
    cfg.validate()?;
    let f = net::score(spec, params, video)?;
    Ok(f - cfg.reference_energy(video))
}

/// `E(I; w) = −f(I; w) + ‖I‖²/(2σ²)`; exactly the negated log density.
pub fn energy(spec: &NetSpec, params: &NetParams, cfg: &ModelConfig, video: &VideoTensor) -> Result<f64> {
    Ok(-log_unnormalized_density(spec, params, cfg, video)?)
}

/// `∂E/∂I = I/σ² − B` (Gaussian) or `−B` (uniform), with `B = ∂f/∂I`.
pub fn energy_grad(spec: &NetSpec, params: &NetParams, cfg: &ModelConfig, video: &VideoTensor) -> Result<VideoTensor> {
    energy_and_grad(spec, params, cfg, video).map(|(_, g)| g)
}

/// Energy and its input gradient from one forward/backward pass.
pub fn energy_and_grad(
    spec: &NetSpec,
    params: &NetParams,
    cfg: &ModelConfig,
    video: &VideoTensor,
) -> Result<(f64, VideoTensor)> {
    cfg.validate()?;
    let (f, b) = net::score_and_grad_input(spec, params, video)?;
    let e = -(f - cfg.reference_energy(video));
    let grad = match cfg.ref_kind {
        RefKind::Gaussian => {
            let inv = 1.0 / (cfg.sigma * cfg.sigma);
            let data = video.data().iter().zip(b.data()).map(|(i, bv)| i * inv - bv).collect();
            VideoTensor::from_vec(video.dims(), data)?
        }
        RefKind::Uniform => b.scaled(-1.0),
    };
    Ok((e, grad))
}

/// Mean synthesized energy minus mean observed energy.
///
/// Learning increases this in the parameters while sampling decreases it in
/// the synthesized sequences.
pub fn value_function(
    spec: &NetSpec,
    params: &NetParams,
    cfg: &ModelConfig,
    synthesized: &[VideoTensor],
    observed: &[VideoTensor],
) -> Result<f64> {
    if synthesized.is_empty() || observed.is_empty() {
        return Err(Error::arg("value function needs non-empty synthesized and observed lists"));
    }
    let mean = |xs: &[VideoTensor]| -> Result<f64> {
        let mut total = 0.0;
        for x in xs {
            total += energy(spec, params, cfg, x)?;
        }
        Ok(total / xs.len() as f64)
    };
    Ok(mean(synthesized)? - mean(observed)?)
}
