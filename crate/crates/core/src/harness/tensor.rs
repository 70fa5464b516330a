//! `TTFT` tensor files.
//!
//! Layout (little-endian):
//! - magic `b"TTFT"`
//! - version: u32 = 1
//! - ndim: u32
//! - dims: ndim × u32
//! - values: product(dims) × f32, row-major
//!
//! Values are held as `f64` in memory and narrowed to `f32` on write.

use std::fs;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"TTFT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("dim overflow")]
    DimOverflow,
    #[error("truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{found} values do not fill dims {dims:?}")]
    CountMismatch { dims: Vec<usize>, found: usize },
    #[error("trailing bytes after tensor data")]
    Trailing,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

fn element_count(dims: &[usize]) -> Result<usize, TensorError> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(TensorError::DimOverflow)
}

pub fn encode_tensor(dims: &[usize], values: &[f64]) -> Result<Vec<u8>, TensorError> {
    let count = element_count(dims)?;
    if count != values.len() {
        return Err(TensorError::CountMismatch {
            dims: dims.to_vec(),
            found: values.len(),
        });
    }
    let ndim = u32::try_from(dims.len()).map_err(|_| TensorError::DimOverflow)?;
    let mut out = Vec::with_capacity(12 + 4 * dims.len() + 4 * count);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&ndim.to_le_bytes());
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| TensorError::DimOverflow)?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], pos: &mut usize) -> Result<u32, TensorError> {
    let end = *pos + 4;
    let chunk = bytes.get(*pos..end).ok_or(TensorError::Truncated {
        expected: end,
        found: bytes.len(),
    })?;
    *pos = end;
    Ok(u32::from_le_bytes(chunk.try_into().unwrap()))
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, TensorError> {
    match bytes.get(..4) {
        Some(m) if m == MAGIC => {}
        Some(_) => return Err(TensorError::BadMagic),
        None => {
            return Err(TensorError::Truncated {
                expected: 4,
                found: bytes.len(),
            })
        }
    }
    let mut pos = 4;
    let version = read_u32(bytes, &mut pos)?;
    if version != VERSION {
        return Err(TensorError::Version(version));
    }
    let ndim = read_u32(bytes, &mut pos)? as usize;
    let header_end = ndim
        .checked_mul(4)
        .and_then(|b| b.checked_add(pos))
        .ok_or(TensorError::DimOverflow)?;
    if header_end > bytes.len() {
        return Err(TensorError::Truncated {
            expected: header_end,
            found: bytes.len(),
        });
    }
    let dims = (0..ndim)
        .map(|_| read_u32(bytes, &mut pos).map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let count = element_count(&dims)?;
    let expected = count
        .checked_mul(4)
        .and_then(|b| b.checked_add(pos))
        .ok_or(TensorError::DimOverflow)?;
    if bytes.len() < expected {
        return Err(TensorError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(TensorError::Trailing);
    }
    let values = bytes[pos..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Ok(Tensor { dims, values })
}

pub fn write_tensor(path: &Path, dims: &[usize], values: &[f64]) -> Result<(), TensorError> {
    let bytes = encode_tensor(dims, values)?;
    fs::write(path, bytes).map_err(|source| TensorError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_tensor(path: &Path) -> Result<Tensor, TensorError> {
    let bytes = fs::read(path).map_err(|source| TensorError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_tensor(&bytes)
}
