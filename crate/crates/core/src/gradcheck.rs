//! Finite-difference checks of the analytic gradients on randomized tiny nets.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::energy::{energy, energy_grad, ModelConfig};
use crate::error::Result;
use crate::net::{forward, grad_input, grad_params, ForwardPass, LayerSpec, NetParams, NetSpec};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Dims, VideoTensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub nets: usize,
    /// Fixed depth; `None` draws 1 to 3 layers per net.
    pub layers: Option<usize>,
    pub seed: u64,
    /// Central-difference step.
    pub step: f64,
    /// Coordinates whose perturbation moves a pre-activation that lies within
    /// this distance of zero (or flips its sign) are skipped.
    pub kink_margin: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            nets: 50,
            layers: None,
            seed: 0,
            step: 1e-4,
            kink_margin: 1e-3,
            tolerance: 1e-4,
        }
    }
}

/// Result for one differentiated operation.
#[derive(Debug, Clone, PartialEq)]
pub struct OpReport {
    pub op: &'static str,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub nets: usize,
    pub tolerance: f64,
    pub ops: Vec<OpReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.ops.iter().all(|o| o.checked > 0 && o.max_rel_error <= self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.ops.iter().fold(0.0, |m, o| m.max(o.max_rel_error))
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} nets, tolerance {:e}", self.nets, self.tolerance)?;
        writeln!(f, "{:<12} {:>14} {:>9} {:>9}  status", "op", "max_rel_err", "checked", "skipped")?;
        for o in &self.ops {
            let ok = o.checked > 0 && o.max_rel_error <= self.tolerance;
            writeln!(
                f,
                "{:<12} {:>14.3e} {:>9} {:>9}  {}",
                o.op,
                o.max_rel_error,
                o.checked,
                o.skipped,
                if ok { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// A random network, parameters and input no larger than 1×6×6×4.
#[derive(Debug, Clone)]
pub struct TinyNet {
    pub spec: NetSpec,
    pub params: NetParams,
    pub input: VideoTensor,
}

/// Draws a tiny net with `layers` layers (1 to 3 when `None`). Weights are
/// scaled by the fan-in; biases are small but nonzero.
pub fn random_tiny_net<R: Rng + ?Sized>(rng: &mut R, layers: Option<usize>) -> Result<TinyNet> {
    let n = layers.unwrap_or_else(|| rng.random_range(1..=3));
    let dims = Dims::new(1, rng.random_range(4..=6), rng.random_range(4..=6), rng.random_range(2..=4));
    let mut spec = NetSpec::new(1, Vec::new());
    let mut cur = dims;
    for l in 0..n {
        let filters = rng.random_range(1..=3);
        let last = l + 1 == n;
        let layer = match rng.random_range(0..4) {
            0 if last => LayerSpec::full(filters),
            1 if last => {
                let kt = rng.random_range(1..=cur.frames);
                LayerSpec::spatial_full(filters, kt, rng.random_range(1..=2))
            }
            _ => {
                let k = |rng: &mut R, extent: usize| rng.random_range(1..=extent.min(3));
                let kernel = [k(rng, cur.height), k(rng, cur.width), k(rng, cur.frames)];
                let stride = [rng.random_range(1..=2), rng.random_range(1..=2), 1];
                LayerSpec::conv3d(filters, kernel, stride)
            }
        };
        spec.layers.push(layer);
        cur = spec.geometry(dims)?.last().expect("at least one layer").output;
    }
    let mut params = NetParams::zeros(&spec, dims)?;
    for layer in &mut params.layers {
        let std = 1.0 / (layer.filter_len() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        for w in &mut layer.weights {
            *w = normal.sample(rng);
        }
        for b in &mut layer.biases {
            *b = 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let input = VideoTensor::from_fn(dims, |_, _, _, _| rng.sample(StandardNormal));
    Ok(TinyNet { spec, params, input })
}

/// True when no pre-activation touched by the perturbation lies within
/// `margin` of zero or changes sign.
pub fn away_from_kinks(base: &ForwardPass, perturbed: &[&ForwardPass], margin: f64) -> bool {
    perturbed.iter().all(|p| {
        base.pre.iter().zip(&p.pre).all(|(b, q)| {
            b.data().iter().zip(q.data()).all(|(&u, &v)| {
                u == v || (u.signum() == v.signum() && u.abs() >= margin && v.abs() >= margin)
            })
        })
    })
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn param_mut(p: &mut NetParams, mut j: usize) -> &mut f64 {
    for layer in &mut p.layers {
        if j < layer.weights.len() {
            return &mut layer.weights[j];
        }
        j -= layer.weights.len();
        if j < layer.biases.len() {
            return &mut layer.biases[j];
        }
        j -= layer.biases.len();
    }
    panic!("parameter index out of range")
}

struct Tally {
    op: &'static str,
    max: f64,
    checked: usize,
    skipped: usize,
}

impl Tally {
    fn new(op: &'static str) -> Self {
        Self { op, max: 0.0, checked: 0, skipped: 0 }
    }

    fn record(&mut self, safe: bool, analytic: f64, numeric: f64) {
        if safe {
            self.max = self.max.max(rel_error(analytic, numeric));
            self.checked += 1;
        } else {
            self.skipped += 1;
        }
    }

    fn report(self) -> OpReport {
        OpReport {
            op: self.op,
            max_rel_error: self.max,
            checked: self.checked,
            skipped: self.skipped,
        }
    }
}

/// Checks one net; accumulates into the three tallies.
fn check_net(net: &TinyNet, model: &ModelConfig, cfg: &GradcheckConfig, tallies: &mut [Tally; 3]) -> Result<()> {
    let TinyNet { spec, params, input } = net;
    let h = cfg.step;
    let base = forward(spec, params, input)?;
    let gi = grad_input(spec, params, input)?;
    let ge = energy_grad(spec, params, model, input)?;
    for j in 0..input.len() {
        let mut plus = input.clone();
        plus.data_mut()[j] += h;
        let mut minus = input.clone();
        minus.data_mut()[j] -= h;
        let (fp, fm) = (forward(spec, params, &plus)?, forward(spec, params, &minus)?);
        let safe = away_from_kinks(&base, &[&fp, &fm], cfg.kink_margin);
        tallies[0].record(safe, gi.data()[j], (fp.score() - fm.score()) / (2.0 * h));
        let numeric = (energy(spec, params, model, &plus)? - energy(spec, params, model, &minus)?) / (2.0 * h);
        tallies[2].record(safe, ge.data()[j], numeric);
    }
    let gp = grad_params(spec, params, input)?.to_flat();
    for (j, &analytic) in gp.iter().enumerate() {
        let mut plus = params.clone();
        *param_mut(&mut plus, j) += h;
        let mut minus = params.clone();
        *param_mut(&mut minus, j) -= h;
        let (fp, fm) = (forward(spec, &plus, input)?, forward(spec, &minus, input)?);
        let safe = away_from_kinks(&base, &[&fp, &fm], cfg.kink_margin);
        tallies[1].record(safe, analytic, (fp.score() - fm.score()) / (2.0 * h));
    }
    Ok(())
}

/// Runs the suite. Each net also gets a random reference model (Gaussian with
/// σ in [0.5, 2], or uniform) for the energy gradient.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = stream_rng(cfg.seed, 0, Stream::Gradcheck);
    let mut tallies = [Tally::new("grad_input"), Tally::new("grad_params"), Tally::new("energy_grad")];
    for _ in 0..cfg.nets {
        let net = random_tiny_net(&mut rng, cfg.layers)?;
        let model = if rng.random_bool(0.75) {
            ModelConfig::gaussian(rng.random_range(0.5..2.0))
        } else {
            ModelConfig::uniform()
        };
        check_net(&net, &model, cfg, &mut tallies)?;
    }
    Ok(GradcheckReport {
        nets: cfg.nets,
        tolerance: cfg.tolerance,
        ops: tallies.into_iter().map(Tally::report).collect(),
    })
}
