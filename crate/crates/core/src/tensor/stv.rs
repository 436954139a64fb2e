//! STV1 container: `"STV1"`, five little-endian u32 (channels, height, width,
//! frames, dtype), then the raw payload in frame-major order.

use std::fs;
use std::path::Path;

use super::{Dims, MaskTensor, VideoTensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"STV1";
const HEADER_LEN: usize = 4 + 5 * 4;

/// Element type of an STV1 payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StvDtype {
    U8 = 0,
    F32 = 1,
}

impl StvDtype {
    fn from_flag(flag: u32) -> Option<Self> {
        match flag {
            0 => Some(StvDtype::U8),
            1 => Some(StvDtype::F32),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            StvDtype::U8 => 1,
            StvDtype::F32 => 4,
        }
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn parse_header(bytes: &[u8]) -> Result<(Dims, StvDtype)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(bytes.len() as u64, "truncated header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(0, "bad magic, expected STV1"));
    }
    let field = |i: usize| read_u32(bytes, 4 + 4 * i) as usize;
    let dims = Dims::new(field(0), field(1), field(2), field(3));
    let flag = read_u32(bytes, 20);
    let dtype = StvDtype::from_flag(flag)
        .ok_or_else(|| Error::format(20, format!("unsupported dtype flag {flag}")))?;
    Ok((dims, dtype))
}

pub(crate) fn decode(bytes: &[u8]) -> Result<(VideoTensor, StvDtype)> {
    let (dims, dtype) = parse_header(bytes)?;
    let expected = dims
        .len()
        .checked_mul(dtype.width())
        .ok_or_else(|| Error::format(4, "dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: expected {expected} bytes, found {}", payload.len()),
        ));
    }
    if payload.len() > expected {
        return Err(Error::format(
            (HEADER_LEN + expected) as u64,
            "trailing bytes after payload",
        ));
    }
    let data: Vec<f64> = match dtype {
        StvDtype::U8 => payload.iter().map(|&b| f64::from(b)).collect(),
        StvDtype::F32 => {
            let mut out = Vec::with_capacity(dims.len());
            for (i, chunk) in payload.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes(chunk.try_into().unwrap());
                if !v.is_finite() {
                    return Err(Error::format(
                        (HEADER_LEN + 4 * i) as u64,
                        "non-finite f32 value",
                    ));
                }
                out.push(f64::from(v));
            }
            out
        }
    };
    Ok((VideoTensor { dims, data }, dtype))
}

pub(crate) fn encode(v: &VideoTensor, dtype: StvDtype) -> Result<Vec<u8>> {
    let d = v.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + d.len() * dtype.width());
    out.extend_from_slice(MAGIC);
    for n in [d.channels, d.height, d.width, d.frames] {
        let n = u32::try_from(n).map_err(|_| Error::arg(format!("dimension {n} exceeds u32")))?;
        out.extend_from_slice(&n.to_le_bytes());
    }
    out.extend_from_slice(&(dtype as u32).to_le_bytes());
    match dtype {
        StvDtype::U8 => {
            for (i, &x) in v.data().iter().enumerate() {
                if !(0.0..=255.0).contains(&x) || x.fract() != 0.0 {
                    return Err(Error::arg(format!(
                        "value {x} at flat index {i} is not an integer in [0, 255]; clamp before writing u8"
                    )));
                }
                out.push(x as u8);
            }
        }
        StvDtype::F32 => {
            for &x in v.data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Reads an STV1 file, converting either dtype to f64.
pub fn read_stv(path: impl AsRef<Path>) -> Result<VideoTensor> {
    read_stv_with_dtype(path).map(|(v, _)| v)
}

pub fn read_stv_with_dtype(path: impl AsRef<Path>) -> Result<(VideoTensor, StvDtype)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Writes `v` as STV1. For [`StvDtype::U8`] every value must already be an
/// integer in `[0, 255]`.
pub fn write_stv(v: &VideoTensor, path: impl AsRef<Path>, dtype: StvDtype) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(v, dtype)?;
    crate::run::write_atomic(path, &bytes)
}

pub(crate) fn decode_mask(bytes: &[u8]) -> Result<MaskTensor> {
    let (dims, dtype) = parse_header(bytes)?;
    if dims.channels != 1 {
        return Err(Error::format(4, format!("mask must have 1 channel, found {}", dims.channels)));
    }
    if dtype != StvDtype::U8 {
        return Err(Error::format(20, "mask must use the u8 dtype"));
    }
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != dims.len() {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: expected {} bytes, found {}", dims.len(), payload.len()),
        ));
    }
    let mut bits = Vec::with_capacity(payload.len());
    for (i, &b) in payload.iter().enumerate() {
        match b {
            0 => bits.push(0),
            255 => bits.push(1),
            other => {
                return Err(Error::format(
                    (HEADER_LEN + i) as u64,
                    format!("mask value {other} is neither 0 nor 255"),
                ))
            }
        }
    }
    MaskTensor::from_bits(dims.height, dims.width, dims.frames, &bits)
}

/// Reads a mask file (one channel, u8, values 0 or 255 with 255 = observed).
pub fn read_mask(path: impl AsRef<Path>) -> Result<MaskTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask(&bytes)
}

pub fn write_mask(mask: &MaskTensor, path: impl AsRef<Path>) -> Result<()> {
    let data = mask.bits().iter().map(|&b| f64::from(b) * 255.0).collect();
    let v = VideoTensor {
        dims: mask.dims(),
        data,
    };
    write_stv(&v, path, StvDtype::U8)
}
