//! Directory-of-frames conversion: one binary PGM (gray) or PPM (RGB) file per
//! frame, named `frame_%04d.pgm` / `frame_%04d.ppm`.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Dims, VideoTensor};
use crate::error::{Error, Result};

fn frame_name(t: usize, channels: usize) -> String {
    let ext = if channels == 1 { "pgm" } else { "ppm" };
    format!("frame_{t:04}.{ext}")
}

/// Writes every frame of `v` into `dir`, rounding to the nearest integer and
/// clamping to `[0, 255]`. Returns how many elements were clamped.
pub fn export_frames(v: &VideoTensor, dir: impl AsRef<Path>) -> Result<usize> {
    let dir = dir.as_ref();
    let d = v.dims();
    let magic = match d.channels {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(Error::arg(format!(
                "frame export needs 1 or 3 channels, video has {c}"
            )))
        }
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut clamped = 0;
    for t in 0..d.frames {
        let mut bytes = format!("{magic}\n{} {}\n255\n", d.width, d.height).into_bytes();
        // PPM interleaves channels per pixel.
        for y in 0..d.height {
            for x in 0..d.width {
                for c in 0..d.channels {
                    let r = v.get(c, y, x, t).round();
                    if !(0.0..=255.0).contains(&r) {
                        clamped += 1;
                    }
                    bytes.push(r.clamp(0.0, 255.0) as u8);
                }
            }
        }
        let path = dir.join(frame_name(t, d.channels));
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(clamped)
}

struct Pnm {
    channels: usize,
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

fn parse_pnm(bytes: &[u8]) -> Result<Pnm> {
    let channels = match bytes.get(0..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::format(0, "expected binary PGM (P5) or PPM (P6)")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(start as u64, "malformed header number"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(pos as u64, format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height * channels;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| Error::format(bytes.len() as u64, "truncated raster"))?;
    Ok(Pnm {
        channels,
        width,
        height,
        pixels: raster.to_vec(),
    })
}

/// Reads `frame_0000.*`, `frame_0001.*`, … from `dir` until the sequence ends.
pub fn import_frames(dir: impl AsRef<Path>) -> Result<VideoTensor> {
    let dir = dir.as_ref();
    let mut frames = Vec::new();
    loop {
        let t = frames.len();
        let candidates: [PathBuf; 2] = [dir.join(frame_name(t, 1)), dir.join(frame_name(t, 3))];
        let Some(path) = candidates.iter().find(|p| p.exists()) else {
            break;
        };
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        frames.push(parse_pnm(&bytes)?);
    }
    let first = frames
        .first()
        .ok_or_else(|| Error::arg(format!("no frame_0000 file in {}", dir.display())))?;
    let dims = Dims::new(first.channels, first.height, first.width, frames.len());
    let mut v = VideoTensor::zeros(dims);
    for (t, f) in frames.iter().enumerate() {
        if (f.channels, f.height, f.width) != (dims.channels, dims.height, dims.width) {
            return Err(Error::shape(format!("frame {t} differs in size or channel count")));
        }
        for y in 0..dims.height {
            for x in 0..dims.width {
                for c in 0..dims.channels {
                    let p = f.pixels[(y * dims.width + x) * dims.channels + c];
                    v.set(c, y, x, t, f64::from(p));
                }
            }
        }
    }
    Ok(v)
}
