//! `.dtz` binary tensor files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | content                         |
//! |--------------|---------------------------------|
//! | 4            | magic `DATS`                    |
//! | 2            | format version (`u16`, = 1)     |
//! | 1            | dtype code (`u8`, 1 = f64)      |
//! | 1            | ndim (`u8`)                     |
//! | 8 · ndim     | dims (`u64` each)               |
//! | 8 · ∏dims    | row-major f64 payload           |

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{GatsError, Result};
use crate::tensor::{DenseMatrix, DenseTensor, MAX_ORDER};

pub const MAGIC: &[u8; 4] = b"DATS";
pub const FORMAT_VERSION: u16 = 1;
pub const DTYPE_F64: u8 = 1;

pub fn encode(x: &DenseTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * x.order() + 8 * x.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(DTYPE_F64);
    out.push(x.order() as u8);
    for &d in x.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in x.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<DenseTensor> {
    let fmt = |m: &str| GatsError::Format(m.to_string());
    if bytes.len() < 8 {
        return Err(fmt("truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(fmt("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(GatsError::Format(format!("unsupported version {version}")));
    }
    if bytes[6] != DTYPE_F64 {
        return Err(GatsError::Format(format!("unsupported dtype code {}", bytes[6])));
    }
    let ndim = bytes[7] as usize;
    if ndim == 0 || ndim > MAX_ORDER {
        return Err(GatsError::Format(format!("unsupported ndim {ndim}")));
    }
    let header = 8 + 8 * ndim;
    if bytes.len() < header {
        return Err(fmt("truncated dims"));
    }
    let dims: Vec<usize> = bytes[8..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| fmt("dims overflow"))?;
    let payload = &bytes[header..];
    if Some(payload.len()) != count.checked_mul(8) {
        return Err(GatsError::Format(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            count.saturating_mul(8)
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseTensor::new(dims, data)
}

pub fn write(path: impl AsRef<Path>, x: &DenseTensor) -> Result<()> {
    fs::write(path, encode(x))?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<DenseTensor> {
    decode(&fs::read(path)?)
}

pub fn write_matrix(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    write(path, &m.to_tensor())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    read(path)?.to_matrix()
}

/// Lower-case hex SHA-256 of the `.dtz` encoding of `x`.
pub fn content_hash(x: &DenseTensor) -> String {
    let digest = Sha256::digest(encode(x));
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
