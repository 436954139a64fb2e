//! Filter weights and biases, plus the STP1 binary container.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::spec::{Extent, LayerGeometry, NetSpec};
use crate::error::{Error, Result};
use crate::tensor::Dims;

/// Weights of one layer, laid out `[filter][in_channel][dt][dy][dx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub filters: usize,
    pub in_channels: usize,
    pub kernel: Extent,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl LayerParams {
    pub fn zeros(filters: usize, in_channels: usize, kernel: Extent) -> Self {
        let n = filters * in_channels * kernel[0] * kernel[1] * kernel[2];
        Self {
            filters,
            in_channels,
            kernel,
            weights: vec![0.0; n],
            biases: vec![0.0; filters],
        }
    }

    pub fn filter_len(&self) -> usize {
        self.in_channels * self.kernel[0] * self.kernel[1] * self.kernel[2]
    }

    #[inline]
    pub fn weight_index(&self, k: usize, i: usize, dy: usize, dx: usize, dt: usize) -> usize {
        let [kh, kw, kt] = self.kernel;
        (((k * self.in_channels + i) * kt + dt) * kh + dy) * kw + dx
    }

    fn same_shape(&self, other: &LayerParams) -> bool {
        self.filters == other.filters && self.in_channels == other.in_channels && self.kernel == other.kernel
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.biases)
    }
}

/// All parameters of a network; also used as the container for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub layers: Vec<LayerParams>,
}

impl NetParams {
    pub fn zeros(spec: &NetSpec, input: Dims) -> Result<Self> {
        let geometry = spec.geometry(input)?;
        Ok(Self::zeros_for(&geometry))
    }

    pub(crate) fn zeros_for(geometry: &[LayerGeometry]) -> Self {
        Self {
            layers: geometry
                .iter()
                .map(|g| LayerParams::zeros(g.output.channels, g.input.channels, g.kernel))
                .collect(),
        }
    }

    /// Independent Gaussian weights with mean 0 and the given standard
    /// deviation; biases 0.
    pub fn gaussian<R: Rng + ?Sized>(spec: &NetSpec, input: Dims, std: f64, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(spec, input)?;
        let normal = Normal::new(0.0, std).map_err(|e| Error::arg(format!("weight std {std}: {e}")))?;
        for layer in &mut p.layers {
            for w in &mut layer.weights {
                *w = normal.sample(rng);
            }
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams::zeros(l.filters, l.in_channels, l.kernel))
                .collect(),
        }
    }

    pub fn num_values(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Flattened view in layer order, weights before biases.
    pub fn to_flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.values().copied()).collect()
    }

    pub fn check_same_shape(&self, other: &NetParams) -> Result<()> {
        if self.layers.len() != other.layers.len()
            || self.layers.iter().zip(&other.layers).any(|(a, b)| !a.same_shape(b))
        {
            return Err(Error::shape("parameter containers differ in shape"));
        }
        Ok(())
    }

    /// Checks the first `geometry.len()` layers against the geometry; extra
    /// layers are allowed (they belong to not-yet-active upper layers).
    pub(crate) fn check_geometry(&self, geometry: &[LayerGeometry]) -> Result<()> {
        if self.layers.len() < geometry.len() {
            return Err(Error::shape(format!(
                "params have {} layers, net needs {}",
                self.layers.len(),
                geometry.len()
            )));
        }
        for (l, (p, g)) in self.layers.iter().zip(geometry).enumerate() {
            if p.filters != g.output.channels || p.in_channels != g.input.channels || p.kernel != g.kernel {
                return Err(Error::shape(format!(
                    "layer {}: params are {} filters x {} channels x {:?}, net needs {} x {} x {:?}",
                    l + 1,
                    p.filters,
                    p.in_channels,
                    p.kernel,
                    g.output.channels,
                    g.input.channels,
                    g.kernel
                )));
            }
        }
        Ok(())
    }

    pub fn sq_norm(&self) -> f64 {
        self.layers.iter().flat_map(|l| l.values()).fold(0.0, |acc, v| acc + v * v)
    }

    pub fn norm(&self) -> f64 {
        self.sq_norm().sqrt()
    }

    pub fn dot(&self, other: &NetParams) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .layers
            .iter()
            .zip(&other.layers)
            .flat_map(|(a, b)| a.values().zip(b.values()))
            .fold(0.0, |acc, (x, y)| acc + x * y))
    }

    /// `self += a · other` on every layer.
    pub fn add_scaled(&mut self, a: f64, other: &NetParams) -> Result<()> {
        self.check_same_shape(other)?;
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in l.weights.iter_mut().zip(&o.weights) {
                *x += a * y;
            }
            for (x, y) in l.biases.iter_mut().zip(&o.biases) {
                *x += a * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w *= a);
            l.biases.iter_mut().for_each(|b| *b *= a);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().flat_map(|l| l.values()).all(|v| v.is_finite())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STP_MAGIC);
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            for n in [l.filters, l.in_channels, l.kernel[0], l.kernel[1], l.kernel[2]] {
                out.extend_from_slice(&(n as u32).to_le_bytes());
            }
            for v in l.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != STP_MAGIC {
            return Err(Error::format(0, "bad magic, expected STP1"));
        }
        let count = r.u32()? as usize;
        let mut layers = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let filters = r.u32()? as usize;
            let in_channels = r.u32()? as usize;
            let kernel = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
            let mut l = LayerParams::zeros(filters, in_channels, kernel);
            for w in &mut l.weights {
                *w = r.f64()?;
            }
            for b in &mut l.biases {
                *b = r.f64()?;
            }
            layers.push(l);
        }
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos as u64, "trailing bytes after parameters"));
        }
        Ok(Self { layers })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

const STP_MAGIC: &[u8; 4] = b"STP1";

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::format(self.bytes.len() as u64, "truncated parameter file"))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        let at = self.pos;
        let v = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format(at as u64, "non-finite parameter"));
        }
        Ok(v)
    }
}
