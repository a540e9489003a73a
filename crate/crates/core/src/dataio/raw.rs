//! Minimal little-endian binary volume format.
//!
//! Layout (44-byte header, then data):
//!
//! | field   | type      | value                        |
//! |---------|-----------|------------------------------|
//! | magic   | `[u8; 4]` | `SVRV`                       |
//! | version | `u32`     | 1                            |
//! | dtype   | `u32`     | 16 (float32, NIfTI code)     |
//! | depth   | `u64`     | D                            |
//! | rows    | `u64`     | H                            |
//! | cols    | `u64`     | W                            |
//! | spacing | `f64`     | mm per voxel                 |
//!
//! followed by `D·H·W` `f32` values in C order (column fastest).

use std::fs;
use std::path::Path;

use ndarray::Array3;

use crate::error::{Result, SvrError};
use crate::volume::Volume;

pub const MAGIC: &[u8; 4] = b"SVRV";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 16;
pub const HEADER_LEN: usize = 44;

/// Header-plus-payload bytes for a `(D, H, W)` array.
pub fn encode(shape: [usize; 3], spacing: f64, data: &[f32]) -> Vec<u8> {
    assert_eq!(data.len(), shape.iter().product::<usize>(), "raw encode: data/shape mismatch");
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    for n in shape {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    out.extend_from_slice(&spacing.to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses bytes produced by [`encode`]; `path` is only used in errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<([usize; 3], f64, Vec<f32>)> {
    let bad = |reason: String| SvrError::MalformedHeader { path: path.to_path_buf(), reason };
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the {HEADER_LEN}-byte header", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let dtype = u32_at(8);
    if dtype != DTYPE_F32 {
        return Err(SvrError::UnsupportedDatatype(format!("raw dtype code {dtype}")));
    }
    let shape = [u64_at(12), u64_at(20), u64_at(28)];
    let spacing = f64::from_le_bytes(bytes[36..44].try_into().unwrap());
    let count = shape
        .iter()
        .try_fold(1u64, |acc, &n| acc.checked_mul(n))
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| bad(format!("dimensions {shape:?} overflow")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 4 * count {
        return Err(bad(format!("expected {} data bytes, found {}", 4 * count, payload.len())));
    }
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((shape.map(|n| n as usize), spacing, data))
}

pub fn write_array(path: &Path, shape: [usize; 3], spacing: f64, data: &[f32]) -> Result<()> {
    fs::write(path, encode(shape, spacing, data)).map_err(|e| SvrError::io(format!("writing {}", path.display()), e))
}

pub fn read_array(path: &Path) -> Result<([usize; 3], f64, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| SvrError::io(format!("reading {}", path.display()), e))?;
    decode(&bytes, path)
}

pub fn write_volume(path: &Path, vol: &Volume) -> Result<()> {
    write_array(path, vol.shape(), vol.geometry.spacing, vol.as_slice())
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let ([d, h, w], spacing, data) = read_array(path)?;
    let arr = Array3::from_shape_vec((d, h, w), data).expect("length checked against header");
    Volume::new(arr, spacing)
}
