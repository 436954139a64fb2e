//! Network architecture: layer kinds, presets, feature-map geometry and the
//! `key=value` text form.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Dims;

/// Spatial-temporal extent ordered `(height, width, frames)`.
pub type Extent = [usize; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// Locally supported filter convolved in space and time.
    Conv3d { kernel: Extent, stride: Extent },
    /// Spans the whole incoming spatial extent; convolutional in time only.
    SpatialFull { kernel_t: usize, stride_t: usize },
    /// One response per filter covering the entire incoming volume.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub filters: usize,
}

impl LayerSpec {
    pub fn conv3d(filters: usize, kernel: Extent, stride: Extent) -> Self {
        Self {
            kind: LayerKind::Conv3d { kernel, stride },
            filters,
        }
    }

    pub fn spatial_full(filters: usize, kernel_t: usize, stride_t: usize) -> Self {
        Self {
            kind: LayerKind::SpatialFull { kernel_t, stride_t },
            filters,
        }
    }

    pub fn full(filters: usize) -> Self {
        Self {
            kind: LayerKind::Full,
            filters,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            LayerKind::Conv3d { .. } => "conv3d",
            LayerKind::SpatialFull { .. } => "spatial_full",
            LayerKind::Full => "full",
        }
    }
}

/// Concrete geometry of one layer once the incoming feature-map size is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerGeometry {
    pub input: Dims,
    pub output: Dims,
    pub kernel: Extent,
    pub stride: Extent,
}

impl LayerGeometry {
    pub fn kernel_len(&self) -> usize {
        self.kernel[0] * self.kernel[1] * self.kernel[2]
    }

    /// Weights per filter: incoming channels × kernel support.
    pub fn filter_len(&self) -> usize {
        self.input.channels * self.kernel_len()
    }
}

fn valid_out(len: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || kernel > len {
        None
    } else {
        Some((len - kernel) / stride + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetSpec {
    pub fn new(input_channels: usize, layers: Vec<LayerSpec>) -> Self {
        Self {
            input_channels,
            layers,
        }
    }

    /// The published architectures: `exp1` (three convolutional layers),
    /// `exp2` (spatially fully connected second layer) and `exp3` (single
    /// fully connected top filter). Input channels default to 3.
    pub fn preset(name: &str) -> Result<Self> {
        let layers = match name {
            "exp1" => vec![
                LayerSpec::conv3d(120, [15, 15, 15], [7, 7, 7]),
                LayerSpec::conv3d(40, [7, 7, 7], [3, 3, 3]),
                LayerSpec::conv3d(20, [3, 3, 2], [2, 2, 1]),
            ],
            "exp2" => vec![
                LayerSpec::conv3d(120, [7, 7, 7], [3, 3, 3]),
                LayerSpec::spatial_full(30, 4, 2),
                LayerSpec::conv3d(5, [1, 1, 2], [1, 1, 1]),
            ],
            "exp3" => vec![
                LayerSpec::conv3d(200, [7, 7, 7], [3, 3, 3]),
                LayerSpec::full(1),
            ],
            other => return Err(Error::arg(format!("unknown preset {other:?}"))),
        };
        Ok(Self::new(3, layers))
    }

    pub fn with_input_channels(mut self, channels: usize) -> Self {
        self.input_channels = channels;
        self
    }

    /// The first `n` layers.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            input_channels: self.input_channels,
            layers: self.layers[..n.min(self.layers.len())].to_vec(),
        }
    }

    /// Chains the valid-convolution output sizes through every layer.
    pub fn geometry(&self, input: Dims) -> Result<Vec<LayerGeometry>> {
        if input.channels != self.input_channels {
            return Err(Error::shape(format!(
                "net expects {} input channels, video has {}",
                self.input_channels, input.channels
            )));
        }
        if self.layers.is_empty() {
            return Err(Error::arg("net has no layers"));
        }
        let mut cur = input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.filters == 0 {
                return Err(Error::shape(format!("layer {} ({}): zero filters", l + 1, layer.kind_name())));
            }
            let (kernel, stride) = match layer.kind {
                LayerKind::Conv3d { kernel, stride } => (kernel, stride),
                LayerKind::SpatialFull { kernel_t, stride_t } => {
                    ([cur.height, cur.width, kernel_t], [1, 1, stride_t])
                }
                LayerKind::Full => ([cur.height, cur.width, cur.frames], [1, 1, 1]),
            };
            let sizes = [cur.height, cur.width, cur.frames];
            let mut o = [0; 3];
            for a in 0..3 {
                o[a] = valid_out(sizes[a], kernel[a], stride[a]).ok_or_else(|| {
                    Error::shape(format!(
                        "layer {} ({}): kernel {}x{}x{} stride {}x{}x{} does not fit input {}",
                        l + 1,
                        layer.kind_name(),
                        kernel[0],
                        kernel[1],
                        kernel[2],
                        stride[0],
                        stride[1],
                        stride[2],
                        cur
                    ))
                })?;
            }
            let output = Dims::new(layer.filters, o[0], o[1], o[2]);
            out.push(LayerGeometry {
                input: cur,
                output,
                kernel,
                stride,
            });
            cur = output;
        }
        Ok(out)
    }

    /// Parses the text form written by the `Display` impl. Blank lines and
    /// `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut input_channels = None;
        let mut layers = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cfg_err = |message: String| Error::Config {
                line: n + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("expected key=value, found {line:?}")))?;
            match key.trim() {
                "input_channels" => {
                    input_channels = Some(
                        value
                            .trim()
                            .parse()
                            .map_err(|_| cfg_err(format!("bad input_channels {value:?}")))?,
                    )
                }
                "layer" => layers.push(value.parse::<LayerSpec>().map_err(|e| cfg_err(e.to_string()))?),
                other => return Err(cfg_err(format!("unknown key {other:?}"))),
            }
        }
        Ok(Self {
            input_channels: input_channels.ok_or_else(|| Error::Config {
                line: 0,
                message: "missing input_channels".into(),
            })?,
            layers,
        })
    }
}

impl fmt::Display for NetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "input_channels={}", self.input_channels)?;
        for layer in &self.layers {
            writeln!(f, "layer={layer}")?;
        }
        Ok(())
    }
}

fn fmt_extent(e: [Option<usize>; 3]) -> String {
    e.iter()
        .map(|v| v.map_or_else(|| "*".to_string(), |n| n.to_string()))
        .collect::<Vec<_>>()
        .join("x")
}

fn parse_extent(s: &str) -> Result<[Option<usize>; 3]> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 3 {
        return Err(Error::arg(format!("extent {s:?} must be HxWxT")));
    }
    let mut out = [None; 3];
    for (slot, p) in out.iter_mut().zip(parts) {
        *slot = match p.trim() {
            "*" => None,
            n => Some(
                n.parse()
                    .map_err(|_| Error::arg(format!("bad extent component {n:?}")))?,
            ),
        };
    }
    Ok(out)
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kernel, stride) = match self.kind {
            LayerKind::Conv3d { kernel, stride } => (kernel.map(Some), stride.map(Some)),
            LayerKind::SpatialFull { kernel_t, stride_t } => {
                ([None, None, Some(kernel_t)], [None, None, Some(stride_t)])
            }
            LayerKind::Full => ([None; 3], [None; 3]),
        };
        write!(
            f,
            "{} filters={} kernel={} stride={}",
            self.kind_name(),
            self.filters,
            fmt_extent(kernel),
            fmt_extent(stride)
        )
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    /// `conv3d filters=40 kernel=7x7x7 stride=3x3x3`; `*` marks an extent
    /// that spans the incoming feature map.
    fn from_str(s: &str) -> Result<Self> {
        let mut words = s.split_whitespace();
        let kind = words.next().ok_or_else(|| Error::arg("empty layer description"))?;
        let (mut filters, mut kernel, mut stride) = (None, None, None);
        for w in words {
            let (k, v) = w
                .split_once('=')
                .ok_or_else(|| Error::arg(format!("expected field=value, found {w:?}")))?;
            match k {
                "filters" => {
                    filters = Some(v.parse::<usize>().map_err(|_| Error::arg(format!("bad filters {v:?}")))?)
                }
                "kernel" => kernel = Some(parse_extent(v)?),
                "stride" => stride = Some(parse_extent(v)?),
                other => return Err(Error::arg(format!("unknown layer field {other:?}"))),
            }
        }
        let filters = filters.ok_or_else(|| Error::arg("layer is missing filters="))?;
        let spans = [None; 3];
        let kernel = kernel.unwrap_or(spans);
        let stride = stride.unwrap_or([Some(1); 3]);
        let layer = match kind {
            "conv3d" => {
                let need = |e: [Option<usize>; 3], what: &str| -> Result<Extent> {
                    match e {
                        [Some(a), Some(b), Some(c)] => Ok([a, b, c]),
                        _ => Err(Error::arg(format!("conv3d needs a concrete {what}"))),
                    }
                };
                LayerSpec::conv3d(filters, need(kernel, "kernel")?, need(stride, "stride")?)
            }
            "spatial_full" => {
                let kt = kernel[2].ok_or_else(|| Error::arg("spatial_full needs a temporal kernel size"))?;
                let st = stride[2].unwrap_or(1);
                LayerSpec::spatial_full(filters, kt, st)
            }
            "full" => LayerSpec::full(filters),
            other => return Err(Error::arg(format!("unknown layer kind {other:?}"))),
        };
        Ok(layer)
    }
}
