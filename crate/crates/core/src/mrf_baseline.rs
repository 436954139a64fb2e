//! Pairwise 3-D Markov random field baseline for occlusion recovery.
//!
//! Each channel is an independent field over discrete intensity levels with
//! potentials `λ·|u − v|^p` (p = 1 or 2) between the six axis neighbors in
//! space and time. Occluded pixels are resampled by single-site Gibbs sweeps
//! in raster order, conditional on the observed ones.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Dims, MaskTensor, VideoTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Potential {
    L1,
    L2,
}

impl Potential {
    fn eval(self, d: f64) -> f64 {
        match self {
            Potential::L1 => d.abs(),
            Potential::L2 => d * d,
        }
    }
}

impl FromStr for Potential {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(Potential::L1),
            "l2" => Ok(Potential::L2),
            other => Err(Error::arg(format!("unknown potential {other:?}"))),
        }
    }
}

impl fmt::Display for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Potential::L1 => "l1",
            Potential::L2 => "l2",
        })
    }
}

/// Read-out of the recovered video from the Gibbs run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimate {
    LastSample,
    MeanOfLast(usize),
}

impl FromStr for Estimate {
    type Err = Error;

    /// `last_sample` or `mean_of_last[:n]` (n defaults to 20).
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "last_sample" => Ok(Estimate::LastSample),
            None if s == "mean_of_last" => Ok(Estimate::MeanOfLast(20)),
            Some(("mean_of_last", n)) => n
                .parse()
                .map(Estimate::MeanOfLast)
                .map_err(|_| Error::arg(format!("bad sample count {n:?}"))),
            _ => Err(Error::arg(format!("unknown estimate {s:?}"))),
        }
    }
}

impl fmt::Display for Estimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimate::LastSample => f.write_str("last_sample"),
            Estimate::MeanOfLast(n) => write!(f, "mean_of_last:{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrfConfig {
    pub potential: Potential,
    pub lambda: f64,
    pub sweeps: usize,
    pub estimate: Estimate,
    /// Intensities take the integer values `0..levels`.
    pub levels: usize,
}

impl Default for MrfConfig {
    fn default() -> Self {
        Self {
            potential: Potential::L2,
            lambda: 1.0,
            sweeps: 100,
            estimate: Estimate::MeanOfLast(20),
            levels: 256,
        }
    }
}

impl MrfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::arg(format!("lambda must be finite and positive, got {}", self.lambda)));
        }
        if self.sweeps == 0 {
            return Err(Error::arg("sweeps must be at least 1"));
        }
        if let Estimate::MeanOfLast(n) = self.estimate {
            if n == 0 || n > self.sweeps {
                return Err(Error::arg(format!("mean_of_last:{n} needs 1 ≤ n ≤ sweeps ({})", self.sweeps)));
            }
        }
        if self.levels < 2 {
            return Err(Error::arg("need at least two intensity levels"));
        }
        Ok(())
    }
}

/// Axis neighbors (±y, ±x, ±t) of `(y, x, t)` inside `dims`, in the order
/// −y, +y, −x, +x, −t, +t.
pub fn neighbors(dims: Dims, y: usize, x: usize, t: usize) -> Result<Vec<(usize, usize, usize)>> {
    if y >= dims.height || x >= dims.width || t >= dims.frames {
        return Err(Error::arg(format!("coordinate ({y}, {x}, {t}) outside {dims}")));
    }
    let mut out = Vec::with_capacity(6);
    if y > 0 {
        out.push((y - 1, x, t));
    }
    if y + 1 < dims.height {
        out.push((y + 1, x, t));
    }
    if x > 0 {
        out.push((y, x - 1, t));
    }
    if x + 1 < dims.width {
        out.push((y, x + 1, t));
    }
    if t > 0 {
        out.push((y, x, t - 1));
    }
    if t + 1 < dims.frames {
        out.push((y, x, t + 1));
    }
    Ok(out)
}

/// Single-site conditional `p(v) ∝ exp(−λ Σ_i |v − n_i|^p)` over
/// `v = 0..levels`, normalized.
pub fn gibbs_conditional(neighbor_values: &[f64], cfg: &MrfConfig) -> Vec<f64> {
    let logp: Vec<f64> = (0..cfg.levels)
        .map(|v| {
            let v = v as f64;
            -cfg.lambda * neighbor_values.iter().map(|n| cfg.potential.eval(v - n)).sum::<f64>()
        })
        .collect();
    let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = logp.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = unnorm.iter().sum();
    unnorm.into_iter().map(|p| p / z).collect()
}

fn sample_discrete<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the final cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Gibbs sampler state over the occluded pixels of one video.
#[derive(Debug, Clone)]
pub struct GibbsSampler {
    state: VideoTensor,
    occluded: Vec<usize>,
    cfg: MrfConfig,
}

impl GibbsSampler {
    /// Starts from `video` with each occluded pixel set to the rounded mean of
    /// the observed pixels of its channel.
    pub fn new(video: &VideoTensor, mask: &MaskTensor, cfg: &MrfConfig) -> Result<Self> {
        cfg.validate()?;
        let start = crate::recovery::fill_occluded(video, mask)?;
        let flags = mask.expand(video.dims())?;
        let top = (cfg.levels - 1) as f64;
        let mut state = start;
        let occluded: Vec<usize> = flags.iter().enumerate().filter(|(_, o)| !**o).map(|(j, _)| j).collect();
        for &j in &occluded {
            let v = &mut state.data_mut()[j];
            *v = v.round().clamp(0.0, top);
        }
        Ok(Self {
            state,
            occluded,
            cfg: cfg.clone(),
        })
    }

    pub fn state(&self) -> &VideoTensor {
        &self.state
    }

    pub fn occluded(&self) -> &[usize] {
        &self.occluded
    }

    /// One raster-order pass resampling every occluded pixel.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let dims = self.state.dims();
        let mut values = Vec::with_capacity(6);
        for &j in &self.occluded {
            let (c, y, x, t) = dims.coords(j);
            values.clear();
            for (ny, nx, nt) in neighbors(dims, y, x, t).expect("coordinate inside video") {
                values.push(self.state.get(c, ny, nx, nt));
            }
            let probs = gibbs_conditional(&values, &self.cfg);
            self.state.data_mut()[j] = sample_discrete(&probs, rng) as f64;
        }
    }
}

/// Recovers the occluded pixels of `video` (intensities in `0..levels`).
/// Observed pixels are returned bit-unchanged.
pub fn mrf_recover<R: Rng + ?Sized>(video: &VideoTensor, mask: &MaskTensor, cfg: &MrfConfig, rng: &mut R) -> Result<VideoTensor> {
    cfg.validate()?;
    mask.check_matches(video.dims())?;
    if mask.occluded_count() == 0 {
        return Ok(video.clone());
    }
    let mut sampler = GibbsSampler::new(video, mask, cfg)?;
    let keep = match cfg.estimate {
        Estimate::LastSample => 1,
        Estimate::MeanOfLast(n) => n,
    };
    let mut sums = vec![0.0; sampler.occluded.len()];
    for s in 0..cfg.sweeps {
        sampler.sweep(rng);
        if s + keep >= cfg.sweeps {
            for (acc, &j) in sums.iter_mut().zip(&sampler.occluded) {
                *acc += sampler.state.data()[j];
            }
        }
    }
    let mut out = video.clone();
    for (acc, &j) in sums.iter().zip(&sampler.occluded) {
        out.data_mut()[j] = acc / keep as f64;
    }
    Ok(out)
}
