//! Dense video tensors and binary occlusion masks.
//!
//! Storage is frame-major: all channels of frame 0 come first, each channel
//! stored row-major. A single frame is therefore one contiguous slice.

mod frames;
mod stv;

pub use frames::{export_frames, import_frames};
pub use stv::{read_mask, read_stv, read_stv_with_dtype, write_mask, write_stv, StvDtype};

use std::fmt;

use crate::error::{Error, Result};

/// Extents of a video volume: channels × height × width × frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
}

impl Dims {
    pub const fn new(channels: usize, height: usize, width: usize, frames: usize) -> Self {
        Self {
            channels,
            height,
            width,
            frames,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width * self.frames
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of spatial-temporal positions (one per pixel per frame).
    pub fn positions(&self) -> usize {
        self.height * self.width * self.frames
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize, t: usize) -> usize {
        ((t * self.channels + c) * self.height + y) * self.width + x
    }

    /// Inverse of [`Dims::index`]: returns `(c, y, x, t)`.
    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize, usize) {
        let x = idx % self.width;
        let rest = idx / self.width;
        let y = rest % self.height;
        let rest = rest / self.height;
        let c = rest % self.channels;
        let t = rest / self.channels;
        (c, y, x, t)
    }

    /// Same spatial-temporal extent with a different channel count.
    pub fn with_channels(&self, channels: usize) -> Self {
        Self { channels, ..*self }
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.channels, self.height, self.width, self.frames
        )
    }
}

/// A real-valued image sequence `I(x, t)` with one or more channels.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    dims: Dims,
    data: Vec<f64>,
}

impl VideoTensor {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.len()],
        }
    }

    pub fn filled(dims: Dims, value: f64) -> Self {
        Self {
            dims,
            data: vec![value; dims.len()],
        }
    }

    /// Wraps `data`, checking its length and that every element is finite.
    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::shape(format!(
                "data length {} does not match dims {} ({} elements)",
                data.len(),
                dims,
                dims.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite value at flat index {i}"
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for t in 0..dims.frames {
            for c in 0..dims.channels {
                for y in 0..dims.height {
                    for x in 0..dims.width {
                        data.push(f(c, y, x, t));
                    }
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize, t: usize) -> f64 {
        self.data[self.dims.index(c, y, x, t)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, t: usize, value: f64) {
        let i = self.dims.index(c, y, x, t);
        self.data[i] = value;
    }

    /// Contiguous slice holding all channels of frame `t`.
    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.dims.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn check_same_dims(&self, other: &VideoTensor) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "dims {} vs {}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    /// First flat index holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.first_non_finite() {
            Some(i) => Err(Error::Numerical(format!(
                "{what}: non-finite value at flat index {i}"
            ))),
            None => Ok(()),
        }
    }

    pub fn scaled(&self, a: f64) -> VideoTensor {
        VideoTensor {
            dims: self.dims,
            data: self.data.iter().map(|v| a * v).collect(),
        }
    }

    pub fn sub(&self, other: &VideoTensor) -> Result<VideoTensor> {
        axpy(-1.0, other, self)
    }

    pub fn add(&self, other: &VideoTensor) -> Result<VideoTensor> {
        axpy(1.0, other, self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> VideoTensor {
        VideoTensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Sum of squared elements, accumulated in flat index order.
pub fn sq_norm(v: &VideoTensor) -> f64 {
    v.data.iter().fold(0.0, |acc, x| acc + x * x)
}

/// Inner product `⟨a, b⟩`, accumulated in flat index order.
pub fn dot(a: &VideoTensor, b: &VideoTensor) -> Result<f64> {
    a.check_same_dims(b)?;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .fold(0.0, |acc, (x, y)| acc + x * y))
}

/// Returns `a·x + y`.
pub fn axpy(a: f64, x: &VideoTensor, y: &VideoTensor) -> Result<VideoTensor> {
    x.check_same_dims(y)?;
    Ok(VideoTensor {
        dims: y.dims,
        data: x.data.iter().zip(&y.data).map(|(xv, yv)| a * xv + yv).collect(),
    })
}

/// Binary occlusion indicator: `true` = observed, `false` = occluded.
///
/// Always single-channel; it applies to every channel of the video it masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskTensor {
    height: usize,
    width: usize,
    frames: usize,
    observed: Vec<bool>,
}

impl MaskTensor {
    pub fn all_observed(height: usize, width: usize, frames: usize) -> Self {
        Self {
            height,
            width,
            frames,
            observed: vec![true; height * width * frames],
        }
    }

    pub fn all_occluded(height: usize, width: usize, frames: usize) -> Self {
        Self {
            height,
            width,
            frames,
            observed: vec![false; height * width * frames],
        }
    }

    /// Mask spanning the spatial-temporal extent of `dims`.
    pub fn observed_like(dims: Dims) -> Self {
        Self::all_observed(dims.height, dims.width, dims.frames)
    }

    /// Builds a mask from 0/1 values in `(y, x, t)` frame-major order.
    pub fn from_bits(height: usize, width: usize, frames: usize, bits: &[u8]) -> Result<Self> {
        if bits.len() != height * width * frames {
            return Err(Error::shape(format!(
                "mask data length {} does not match {}x{}x{}",
                bits.len(),
                height,
                width,
                frames
            )));
        }
        let mut observed = Vec::with_capacity(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            match b {
                0 => observed.push(false),
                1 => observed.push(true),
                other => {
                    return Err(Error::arg(format!(
                        "mask value {other} at index {i} is not 0 or 1"
                    )))
                }
            }
        }
        Ok(Self {
            height,
            width,
            frames,
            observed,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Dims of the mask viewed as a one-channel video.
    pub fn dims(&self) -> Dims {
        Dims::new(1, self.height, self.width, self.frames)
    }

    #[inline]
    fn pos(&self, y: usize, x: usize, t: usize) -> usize {
        (t * self.height + y) * self.width + x
    }

    #[inline]
    pub fn is_observed(&self, y: usize, x: usize, t: usize) -> bool {
        self.observed[self.pos(y, x, t)]
    }

    pub fn set_observed(&mut self, y: usize, x: usize, t: usize, observed: bool) {
        let p = self.pos(y, x, t);
        self.observed[p] = observed;
    }

    /// 0/1 values in `(y, x, t)` frame-major order.
    pub fn bits(&self) -> Vec<u8> {
        self.observed.iter().map(|&o| o as u8).collect()
    }

    pub fn occluded_count(&self) -> usize {
        self.observed.iter().filter(|&&o| !o).count()
    }

    pub fn occluded_fraction(&self) -> f64 {
        if self.observed.is_empty() {
            return 0.0;
        }
        self.occluded_count() as f64 / self.observed.len() as f64
    }

    pub fn check_matches(&self, dims: Dims) -> Result<()> {
        if self.height != dims.height || self.width != dims.width || self.frames != dims.frames {
            return Err(Error::shape(format!(
                "mask {}x{}x{} does not match video {}",
                self.height, self.width, self.frames, dims
            )));
        }
        Ok(())
    }

    /// Per-element observed flags expanded to every channel of `dims`,
    /// in the video's flat index order.
    pub fn expand(&self, dims: Dims) -> Result<Vec<bool>> {
        self.check_matches(dims)?;
        let mut out = Vec::with_capacity(dims.len());
        for t in 0..dims.frames {
            for _c in 0..dims.channels {
                let start = self.pos(0, 0, t);
                out.extend_from_slice(&self.observed[start..start + dims.height * dims.width]);
            }
        }
        Ok(out)
    }
}
