//! Binary parameter checkpoints.
//!
//! Layout: the magic bytes `SSREG`, a little-endian `u32` format version, then
//! one record per parameter array until end of file. A record is a `u32` name
//! length, the UTF-8 name, a `u32` rank, `rank` × `u32` dimensions and the
//! values as little-endian `f32`.

use std::fs;
use std::path::Path;

use super::{ModelParams, ModelSpec, ParamArray};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"SSREG";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(params: &ModelParams<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for arr in params.arrays() {
        out.extend_from_slice(&(arr.name.len() as u32).to_le_bytes());
        out.extend_from_slice(arr.name.as_bytes());
        out.extend_from_slice(&(arr.dims.len() as u32).to_le_bytes());
        for &d in &arr.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &arr.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated at byte {}", self.pos)),
        }
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Decodes a checkpoint and validates it against `spec`.
pub fn decode(bytes: &[u8], spec: &ModelSpec) -> std::result::Result<ModelParams<f32>, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let mut arrays = Vec::new();
    while r.pos < bytes.len() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| format!("array name is not UTF-8: {e}"))?
            .to_string();
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let n: usize = dims.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or("array too large")?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        arrays.push(ParamArray { name, dims, data });
    }
    ModelParams::from_arrays(spec, arrays).map_err(|e| e.to_string())
}

pub fn save(path: &Path, params: &ModelParams<f32>) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path, spec: &ModelSpec) -> Result<ModelParams<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, spec).map_err(|reason| Error::Checkpoint { path: path.to_path_buf(), reason })
}
