//! Binary PGM (P5) reading and writing.
//!
//! Images are written with a maxval of 65535 (two big-endian bytes per
//! pixel); 8-bit files are accepted on input.

use std::fs;
use std::path::Path;

use super::ImageTensor;
use crate::error::{Error, Result};

const MAXVAL: u16 = u16::MAX;

pub(crate) fn quantize(v: f32) -> u16 {
    (f64::from(v.clamp(0.0, 1.0)) * f64::from(MAXVAL)).round() as u16
}

pub(crate) fn dequantize(q: u16) -> f32 {
    (f64::from(q) / f64::from(MAXVAL)) as f32
}

pub fn encode(image: &ImageTensor) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", image.width(), image.height(), MAXVAL).into_bytes();
    for &p in image.pixels() {
        out.extend_from_slice(&quantize(p).to_be_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<ImageTensor, String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| "non-ASCII header")?.to_string());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P5" {
        return Err(format!("expected P5 magic, found {}", fields[0]));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| format!("bad header number {s}"));
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    let bpp = if maxval < 256 { 1 } else { 2 };
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() < width * height * bpp {
        return Err(format!("raster has {} bytes, expected {}", raster.len(), width * height * bpp));
    }
    let scale = maxval as f64;
    let pixels = (0..width * height)
        .map(|k| {
            let q = if bpp == 1 {
                f64::from(raster[k])
            } else {
                f64::from(u16::from_be_bytes([raster[2 * k], raster[2 * k + 1]]))
            };
            (q.min(scale) / scale) as f32
        })
        .collect();
    ImageTensor::new(height, width, pixels).map_err(|e| e.to_string())
}

pub fn write(path: &Path, image: &ImageTensor) -> Result<()> {
    fs::write(path, encode(image)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<ImageTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}
