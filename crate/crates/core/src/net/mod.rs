//! The spatial-temporal ConvNet that scores a video.
//!
//! Each layer computes, for filter `k` at output position `(x, t)`,
//!
//! ```text
//! pre[k](x, t)  = b_k + Σ_i Σ_(y,s) w[k][i](y, s) · in[i](x·stride + y, t·stride + s)
//! post[k](x, t) = max(0, pre[k](x, t))
//! ```
//!
//! with the raw video channels as the input of the first layer. The score
//! `f(I)` is the sum of every response of the top layer. Because ReLU is
//! piecewise linear, `f(I) = a + ⟨I, B⟩` on each region where the activation
//! pattern is constant, with `B = ∂f/∂I` computed by back-propagation.

mod params;
mod spec;

pub use params::{LayerParams, NetParams};
pub use spec::{Extent, LayerGeometry, LayerKind, LayerSpec, NetSpec};

use crate::error::Result;
use crate::tensor::{dot, Dims, VideoTensor};

/// Binary map over one layer's outputs: `true` where the pre-activation is
/// strictly positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPattern {
    pub dims: Dims,
    pub active: Vec<bool>,
}

/// Activation indicators of every layer; fixes the linear piece of `f`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationPattern {
    pub layers: Vec<LayerPattern>,
}

impl ActivationPattern {
    pub fn count_active(&self) -> usize {
        self.layers.iter().map(|l| l.active.iter().filter(|a| **a).count()).sum()
    }
}

/// Everything computed by one bottom-up pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub geometry: Vec<LayerGeometry>,
    /// Pre-activations per layer.
    pub pre: Vec<VideoTensor>,
    /// Feature maps `[F_k^(l) * I]` per layer (after ReLU).
    pub maps: Vec<VideoTensor>,
}

impl ForwardPass {
    pub fn pattern(&self) -> ActivationPattern {
        ActivationPattern {
            layers: self
                .pre
                .iter()
                .map(|p| LayerPattern {
                    dims: p.dims(),
                    active: p.data().iter().map(|&r| r > 0.0).collect(),
                })
                .collect(),
        }
    }

    /// Sum of the top-layer responses.
    pub fn score(&self) -> f64 {
        self.maps
            .last()
            .map_or(0.0, |top| top.data().iter().fold(0.0, |acc, v| acc + v))
    }

    /// Smallest `|pre-activation|` over all layers: the distance to the
    /// nearest ReLU kink measured in pre-activation units.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.pre
            .iter()
            .flat_map(|p| p.data().iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

/// Score together with its gradients with respect to the input and to every
/// parameter, sharing one forward and one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub score: f64,
    pub input: VideoTensor,
    pub params: NetParams,
}

fn layer_forward(g: &LayerGeometry, p: &LayerParams, input: &VideoTensor) -> VideoTensor {
    let [kh, kw, kt] = g.kernel;
    let [sh, sw, st] = g.stride;
    let (id, od) = (g.input, g.output);
    let src = input.data();
    let mut out = VideoTensor::zeros(od);
    let dst = out.data_mut();
    for to in 0..od.frames {
        for k in 0..od.channels {
            for yo in 0..od.height {
                for xo in 0..od.width {
                    let mut acc = p.biases[k];
                    for i in 0..id.channels {
                        for dt in 0..kt {
                            for dy in 0..kh {
                                let row = id.index(i, yo * sh + dy, xo * sw, to * st + dt);
                                let w0 = p.weight_index(k, i, dy, 0, dt);
                                let ws = &p.weights[w0..w0 + kw];
                                let xs = &src[row..row + kw];
                                for (w, x) in ws.iter().zip(xs) {
                                    acc += w * x;
                                }
                            }
                        }
                    }
                    dst[od.index(k, yo, xo, to)] = acc;
                }
            }
        }
    }
    out
}

/// Accumulates parameter and/or input gradients of one layer given the
/// gradient with respect to its pre-activations.
fn layer_backward(
    g: &LayerGeometry,
    p: &LayerParams,
    input: &VideoTensor,
    grad_pre: &VideoTensor,
    mut grad_params: Option<&mut LayerParams>,
    mut grad_input: Option<&mut VideoTensor>,
) {
    let [kh, kw, kt] = g.kernel;
    let [sh, sw, st] = g.stride;
    let (id, od) = (g.input, g.output);
    let src = input.data();
    for to in 0..od.frames {
        for k in 0..od.channels {
            for yo in 0..od.height {
                for xo in 0..od.width {
                    let gv = grad_pre.data()[od.index(k, yo, xo, to)];
                    if gv == 0.0 {
                        continue;
                    }
                    if let Some(gp) = grad_params.as_deref_mut() {
                        gp.biases[k] += gv;
                    }
                    for i in 0..id.channels {
                        for dt in 0..kt {
                            for dy in 0..kh {
                                let row = id.index(i, yo * sh + dy, xo * sw, to * st + dt);
                                let w0 = p.weight_index(k, i, dy, 0, dt);
                                if let Some(gp) = grad_params.as_deref_mut() {
                                    for (gw, x) in gp.weights[w0..w0 + kw].iter_mut().zip(&src[row..row + kw]) {
                                        *gw += gv * x;
                                    }
                                }
                                if let Some(gi) = grad_input.as_deref_mut() {
                                    let gi = &mut gi.data_mut()[row..row + kw];
                                    for (d, w) in gi.iter_mut().zip(&p.weights[w0..w0 + kw]) {
                                        *d += gv * w;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Bottom-up pass through every layer of `spec`.
///
/// `params` may hold more layers than `spec`; the extra ones are ignored.
/// Layer-by-layer training relies on this to keep inactive upper layers in
/// the same container.
pub fn forward(spec: &NetSpec, params: &NetParams, video: &VideoTensor) -> Result<ForwardPass> {
    let geometry = spec.geometry(video.dims())?;
    params.check_geometry(&geometry)?;
    let mut pre = Vec::with_capacity(geometry.len());
    let mut maps: Vec<VideoTensor> = Vec::with_capacity(geometry.len());
    for (l, g) in geometry.iter().enumerate() {
        let input = if l == 0 { video } else { &maps[l - 1] };
        let r = layer_forward(g, &params.layers[l], input);
        maps.push(r.map(|v| if v > 0.0 { v } else { 0.0 }));
        pre.push(r);
    }
    Ok(ForwardPass { geometry, pre, maps })
}

fn backward(
    params: &NetParams,
    pass: &ForwardPass,
    video: &VideoTensor,
    want_params: bool,
    want_input: bool,
) -> (Option<NetParams>, Option<VideoTensor>) {
    let depth = pass.geometry.len();
    let mut grad_params = want_params.then(|| params.zeros_like());
    let mut grad_input = None;
    // ∂f/∂post at the top is 1 everywhere.
    let mut grad_post = VideoTensor::filled(pass.geometry[depth - 1].output, 1.0);
    for l in (0..depth).rev() {
        let g = &pass.geometry[l];
        let grad_pre = VideoTensor::from_fn(g.output, |c, y, x, t| {
            if pass.pre[l].get(c, y, x, t) > 0.0 {
                grad_post.get(c, y, x, t)
            } else {
                0.0
            }
        });
        let input = if l == 0 { video } else { &pass.maps[l - 1] };
        let need_below = l > 0 || want_input;
        let mut below = need_below.then(|| VideoTensor::zeros(g.input));
        layer_backward(
            g,
            &params.layers[l],
            input,
            &grad_pre,
            grad_params.as_mut().map(|gp| &mut gp.layers[l]),
            below.as_mut(),
        );
        match below {
            Some(b) if l > 0 => grad_post = b,
            b => grad_input = b,
        }
    }
    (grad_params, grad_input)
}

/// `f(I; w)`: the sum over filters, positions and frames of the top layer.
pub fn score(spec: &NetSpec, params: &NetParams, video: &VideoTensor) -> Result<f64> {
    Ok(forward(spec, params, video)?.score())
}

pub fn activation_pattern(spec: &NetSpec, params: &NetParams, video: &VideoTensor) -> Result<ActivationPattern> {
    Ok(forward(spec, params, video)?.pattern())
}

/// `B = ∂f/∂I`, the top-down reconstruction of the current activation pattern.
pub fn grad_input(spec: &NetSpec, params: &NetParams, video: &VideoTensor) -> Result<VideoTensor> {
    let pass = forward(spec, params, video)?;
    let (_, gi) = backward(params, &pass, video, false, true);
    Ok(gi.expect("input gradient requested"))
}

/// `∂f/∂w` for every weight and bias, shaped like `params`.
pub fn grad_params(spec: &NetSpec, params: &NetParams, video: &VideoTensor) -> Result<NetParams> {
    let pass = forward(spec, params, video)?;
    let (gp, _) = backward(params, &pass, video, true, false);
    Ok(gp.expect("parameter gradient requested"))
}

pub fn gradients(spec: &NetSpec, params: &NetParams, video: &VideoTensor) -> Result<Gradients> {
    let pass = forward(spec, params, video)?;
    let (gp, gi) = backward(params, &pass, video, true, true);
    Ok(Gradients {
        score: pass.score(),
        input: gi.expect("input gradient requested"),
        params: gp.expect("parameter gradient requested"),
    })
}

/// Score and input gradient from a single pass.
pub fn score_and_grad_input(spec: &NetSpec, params: &NetParams, video: &VideoTensor) -> Result<(f64, VideoTensor)> {
    let pass = forward(spec, params, video)?;
    let (_, gi) = backward(params, &pass, video, false, true);
    Ok((pass.score(), gi.expect("input gradient requested")))
}

/// Returns `(a, B)` with `f(I') = a + ⟨I', B⟩` for every `I'` sharing the
/// activation pattern of `video`.
pub fn affine_decomposition(spec: &NetSpec, params: &NetParams, video: &VideoTensor) -> Result<(f64, VideoTensor)> {
    let (f, b) = score_and_grad_input(spec, params, video)?;
    let a = f - dot(video, &b)?;
    Ok((a, b))
}
