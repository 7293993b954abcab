//! Binary tensor files: 8-byte magic, `u32` rank, `u32` dims, then
//! little-endian `f32` values in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 8] = b"WMDTNSR1";

pub fn encode_tensor(dims: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    let expected: usize = dims.iter().product();
    if expected != data.len() {
        return Err(Error::Shape(format!("dims {dims:?} need {expected} values, got {}", data.len())));
    }
    let mut out = Vec::with_capacity(12 + 4 * dims.len() + 4 * data.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>)> {
    let bad = |why: &str| Error::Data(format!("tensor file: {why}"));
    if bytes.len() < 12 || &bytes[..8] != TENSOR_MAGIC {
        return Err(bad("bad magic"));
    }
    let word = |i: usize| -> Result<u32> {
        bytes.get(i..i + 4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).ok_or_else(|| bad("truncated header"))
    };
    let rank = word(8)? as usize;
    let dims = (0..rank).map(|k| word(12 + 4 * k).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let body = &bytes[12 + 4 * rank..];
    let count: usize = dims.iter().product();
    if body.len() != 4 * count {
        return Err(bad("payload length does not match its dims"));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((dims, data))
}

pub fn write_tensor(path: &Path, dims: &[usize], data: &[f32]) -> Result<()> {
    fs::write(path, encode_tensor(dims, data)?).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    decode_tensor(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
