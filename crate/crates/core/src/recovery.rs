//! Learning from partially occluded videos.
//!
//! Every iteration first resamples the occluded pixels of each training video
//! with masked Langevin steps under the current model, then runs the usual
//! synthesis and parameter update using the completed videos as observations.
//! With per-frame masks covering a moving object this doubles as background
//! inpainting.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::learner::{run_loop, IterationHook, RecoveryTargets, TrainConfig, TrainState};
use crate::net::{NetParams, NetSpec};
use crate::rng::{stream_rng, Stream};
use crate::sampler::{run_langevin, Model};
use crate::tensor::{read_mask, Dims, MaskTensor, VideoTensor};

/// How occlusion masks are generated.
#[derive(Debug, Clone, PartialEq)]
pub enum OcclusionSpec {
    /// Randomly placed `block` squares (per frame, may overlap) until at
    /// least `coverage` of all pixels are occluded.
    SaltPepper { block: (usize, usize), coverage: f64 },
    /// One block at a uniformly drawn position, the same in every frame.
    SingleRegion { size: (usize, usize) },
    /// `⌊fraction · frames⌋` whole frames, chosen uniformly.
    MissingFrames { fraction: f64 },
    /// A mask file supplied by the user.
    Custom(PathBuf),
}

impl OcclusionSpec {
    pub fn salt_pepper(coverage: f64) -> Self {
        OcclusionSpec::SaltPepper { block: (7, 7), coverage }
    }

    pub fn single_region() -> Self {
        OcclusionSpec::SingleRegion { size: (60, 60) }
    }

    pub fn missing_frames() -> Self {
        OcclusionSpec::MissingFrames { fraction: 0.5 }
    }
}

fn parse_pair(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once('x')
        .ok_or_else(|| Error::arg(format!("expected HxW, found {s:?}")))?;
    let p = |v: &str| v.parse::<usize>().map_err(|_| Error::arg(format!("bad size {v:?}")));
    Ok((p(a)?, p(b)?))
}

fn parse_fraction(s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::arg(format!("bad fraction {s:?}")))
}

impl FromStr for OcclusionSpec {
    type Err = Error;

    /// `salt_pepper[:coverage[:HxW]]`, `single_region[:HxW]`,
    /// `missing_frames[:fraction]` or `custom:PATH`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.splitn(3, ':');
        let kind = parts.next().unwrap_or("");
        let a = parts.next();
        let b = parts.next();
        match kind {
            "salt_pepper" => Ok(OcclusionSpec::SaltPepper {
                coverage: a.map(parse_fraction).transpose()?.unwrap_or(0.5),
                block: b.map(parse_pair).transpose()?.unwrap_or((7, 7)),
            }),
            "single_region" => Ok(OcclusionSpec::SingleRegion {
                size: a.map(parse_pair).transpose()?.unwrap_or((60, 60)),
            }),
            "missing_frames" => Ok(OcclusionSpec::MissingFrames {
                fraction: a.map(parse_fraction).transpose()?.unwrap_or(0.5),
            }),
            "custom" => {
                let rest = s.strip_prefix("custom:").ok_or_else(|| Error::arg("custom occlusion needs a path"))?;
                Ok(OcclusionSpec::Custom(PathBuf::from(rest)))
            }
            other => Err(Error::arg(format!("unknown occlusion kind {other:?}"))),
        }
    }
}

impl fmt::Display for OcclusionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OcclusionSpec::SaltPepper { block, coverage } => {
                write!(f, "salt_pepper:{coverage}:{}x{}", block.0, block.1)
            }
            OcclusionSpec::SingleRegion { size } => write!(f, "single_region:{}x{}", size.0, size.1),
            OcclusionSpec::MissingFrames { fraction } => write!(f, "missing_frames:{fraction}"),
            OcclusionSpec::Custom(p) => write!(f, "custom:{}", p.display()),
        }
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::arg(format!("fraction {f} must lie in (0, 1)")));
    }
    Ok(())
}

fn check_block(block: (usize, usize), dims: Dims) -> Result<()> {
    if block.0 == 0 || block.1 == 0 || block.0 > dims.height || block.1 > dims.width {
        return Err(Error::arg(format!(
            "region {}x{} does not fit inside a {}x{} frame",
            block.0, block.1, dims.height, dims.width
        )));
    }
    Ok(())
}

/// Generates a mask for a video of extent `dims`.
pub fn make_mask<R: Rng + ?Sized>(dims: Dims, spec: &OcclusionSpec, rng: &mut R) -> Result<MaskTensor> {
    if dims.positions() == 0 {
        return Err(Error::arg("empty video"));
    }
    let (h, w, frames) = (dims.height, dims.width, dims.frames);
    let mut mask = MaskTensor::all_observed(h, w, frames);
    match spec {
        OcclusionSpec::SaltPepper { block, coverage } => {
            check_fraction(*coverage)?;
            check_block(*block, dims)?;
            let total = dims.positions() as f64;
            let mut occluded = 0usize;
            while (occluded as f64) < coverage * total {
                let t = rng.random_range(0..frames);
                let y0 = rng.random_range(0..=h - block.0);
                let x0 = rng.random_range(0..=w - block.1);
                for y in y0..y0 + block.0 {
                    for x in x0..x0 + block.1 {
                        if mask.is_observed(y, x, t) {
                            mask.set_observed(y, x, t, false);
                            occluded += 1;
                        }
                    }
                }
            }
        }
        OcclusionSpec::SingleRegion { size } => {
            check_block(*size, dims)?;
            let y0 = rng.random_range(0..=h - size.0);
            let x0 = rng.random_range(0..=w - size.1);
            for t in 0..frames {
                for y in y0..y0 + size.0 {
                    for x in x0..x0 + size.1 {
                        mask.set_observed(y, x, t, false);
                    }
                }
            }
        }
        OcclusionSpec::MissingFrames { fraction } => {
            check_fraction(*fraction)?;
            let n = (fraction * frames as f64).floor() as usize;
            for t in sample(rng, frames, n) {
                for y in 0..h {
                    for x in 0..w {
                        mask.set_observed(y, x, t, false);
                    }
                }
            }
        }
        OcclusionSpec::Custom(path) => {
            mask = read_mask(path)?;
            mask.check_matches(dims)?;
        }
    }
    Ok(mask)
}

/// Replaces each occluded pixel by the mean of the observed pixels of the
/// same channel (0 when a channel has none).
pub fn fill_occluded(video: &VideoTensor, mask: &MaskTensor) -> Result<VideoTensor> {
    let d = video.dims();
    let flags = mask.expand(d)?;
    let mut sums = vec![0.0; d.channels];
    let mut counts = vec![0usize; d.channels];
    for (j, &x) in video.data().iter().enumerate() {
        if flags[j] {
            let c = d.coords(j).0;
            sums[c] += x;
            counts[c] += 1;
        }
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
        .collect();
    let mut out = video.clone();
    for (j, x) in out.data_mut().iter_mut().enumerate() {
        if !flags[j] {
            *x = means[d.coords(j).0];
        }
    }
    Ok(out)
}

/// `k` masked Langevin steps: only occluded pixels move.
pub fn recover_step<R: Rng + ?Sized>(
    model: &Model<'_>,
    recovered: &VideoTensor,
    mask: &MaskTensor,
    k: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<VideoTensor> {
    run_langevin(model, recovered, epsilon, k, rng, Some(mask))
}

#[derive(Debug, Clone)]
pub struct RecoveryState {
    /// Parameters, synthesized chains and diagnostics.
    pub train: TrainState,
    /// Completed training videos `I'_m`.
    pub recovered: Vec<VideoTensor>,
    pub masks: Vec<MaskTensor>,
}

/// Simultaneous learning, synthesis and recovery.
///
/// `videos` are in model (preprocessed) scale; values at occluded positions
/// are ignored and re-initialized with [`fill_occluded`].
pub fn train_with_recovery(
    spec: &NetSpec,
    videos: &[VideoTensor],
    masks: &[MaskTensor],
    cfg: &TrainConfig,
) -> Result<RecoveryState> {
    train_with_recovery_hook(spec, videos, masks, cfg, None, &mut |_| Ok(()))
}

pub fn train_with_recovery_hook(
    spec: &NetSpec,
    videos: &[VideoTensor],
    masks: &[MaskTensor],
    cfg: &TrainConfig,
    initial_params: Option<NetParams>,
    hook: &mut IterationHook<'_>,
) -> Result<RecoveryState> {
    if videos.len() != masks.len() {
        return Err(Error::arg(format!("{} masks for {} videos", masks.len(), videos.len())));
    }
    let initial: Vec<VideoTensor> = videos
        .iter()
        .zip(masks)
        .map(|(v, m)| fill_occluded(v, m))
        .collect::<Result<_>>()?;
    let mut targets = RecoveryTargets {
        videos: initial.clone(),
        masks: masks.to_vec(),
        steps: cfg.recovery_steps.unwrap_or(cfg.langevin_steps),
        rngs: (0..videos.len() as u64)
            .map(|m| stream_rng(cfg.seed, m, Stream::Recovery))
            .collect(),
    };
    let train = run_loop(spec, &initial, Some(&mut targets), cfg, initial_params, hook)?;
    Ok(RecoveryState {
        train,
        recovered: targets.videos,
        masks: targets.masks,
    })
}

fn occluded_diffs<'a>(
    original: &'a VideoTensor,
    recovered: &'a VideoTensor,
    mask: &MaskTensor,
) -> Result<impl Iterator<Item = f64> + 'a> {
    original.check_same_dims(recovered)?;
    let flags = mask.expand(original.dims())?;
    if flags.iter().all(|&o| o) {
        return Err(Error::arg("no occluded pixels to score"));
    }
    Ok(original
        .data()
        .iter()
        .zip(recovered.data())
        .zip(flags)
        .filter(|(_, observed)| !observed)
        .map(|((a, b), _)| a - b))
}

/// Mean absolute difference over occluded pixels (every channel counted).
/// Pass videos in raw intensity units to get errors on the `[0, 255]` scale.
pub fn recovery_error(original: &VideoTensor, recovered: &VideoTensor, mask: &MaskTensor) -> Result<f64> {
    let (mut total, mut n) = (0.0, 0usize);
    for d in occluded_diffs(original, recovered, mask)? {
        total += d.abs();
        n += 1;
    }
    Ok(total / n as f64)
}

/// Root mean squared difference over occluded pixels.
pub fn recovery_rmse(original: &VideoTensor, recovered: &VideoTensor, mask: &MaskTensor) -> Result<f64> {
    let (mut total, mut n) = (0.0, 0usize);
    for d in occluded_diffs(original, recovered, mask)? {
        total += d * d;
        n += 1;
    }
    Ok((total / n as f64).sqrt())
}

/// Removes the masked object (mask = 0) from `video` by co-training the model
/// on the video itself and resampling the masked pixels. `initial_params`
/// starts from an already trained model.
pub fn inpaint_background(
    spec: &NetSpec,
    video: &VideoTensor,
    mask: &MaskTensor,
    cfg: &TrainConfig,
    initial_params: Option<NetParams>,
) -> Result<VideoTensor> {
    mask.check_matches(video.dims())?;
    if mask.occluded_count() == 0 {
        return Ok(video.clone());
    }
    let state = train_with_recovery_hook(
        spec,
        std::slice::from_ref(video),
        std::slice::from_ref(mask),
        cfg,
        initial_params,
        &mut |_| Ok(()),
    )?;
    Ok(state.recovered.into_iter().next().expect("one recovered video"))
}
