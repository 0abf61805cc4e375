//! Flat binary weight container.
//!
//! Layout: the 8-byte magic `CTMW0001`, then one record per tensor:
//! `u32` name length, UTF-8 name, `u32` rows, `u32` cols, then
//! `rows * cols` little-endian `f32` values in row-major order. All integers
//! are little-endian. Records run to the end of the file.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::tensor::Matrix;

pub const MAGIC: &[u8; 8] = b"CTMW0001";

#[derive(Debug, Error)]
pub enum WeightFileError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic; not a weight file")]
    BadMagic,
    #[error("truncated record at byte {0}")]
    Truncated(usize),
    #[error("tensor name is not UTF-8 at byte {0}")]
    BadName(usize),
    #[error("missing tensor {0:?}")]
    Missing(String),
    #[error("tensor {name:?} has shape {actual:?}, expected {expected:?}")]
    Shape { name: String, expected: (usize, usize), actual: (usize, usize) },
    #[error("tensor {0:?} holds non-finite values")]
    NonFinite(String),
}

pub fn encode(tensors: &[(String, Matrix)]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for (name, m) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Matrix)>, WeightFileError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(WeightFileError::BadMagic);
    }
    let mut pos = MAGIC.len();
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], WeightFileError> {
        let slice = bytes.get(*pos..*pos + n).ok_or(WeightFileError::Truncated(*pos))?;
        *pos += n;
        Ok(slice)
    };
    let read_u32 = |pos: &mut usize| -> Result<usize, WeightFileError> {
        let b = take(pos, 4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    };
    let mut tensors = Vec::new();
    while pos < bytes.len() {
        let start = pos;
        let name_len = read_u32(&mut pos)?;
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|_| WeightFileError::BadName(start))?
            .to_string();
        let rows = read_u32(&mut pos)?;
        let cols = read_u32(&mut pos)?;
        let raw = take(&mut pos, rows * cols * 4)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        tensors.push((name, Matrix::from_vec(rows, cols, data).expect("length checked above")));
    }
    Ok(tensors)
}

pub fn write_file(path: &Path, tensors: &[(String, Matrix)]) -> Result<(), WeightFileError> {
    fs::write(path, encode(tensors))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<(String, Matrix)>, WeightFileError> {
    decode(&fs::read(path)?)
}

/// Looks up a tensor by name and checks its shape.
pub fn expect(
    tensors: &[(String, Matrix)],
    name: &str,
    shape: (usize, usize),
) -> Result<Matrix, WeightFileError> {
    let m = tensors
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, m)| m.clone())
        .ok_or_else(|| WeightFileError::Missing(name.to_string()))?;
    if m.shape() != shape {
        return Err(WeightFileError::Shape { name: name.to_string(), expected: shape, actual: m.shape() });
    }
    if !m.is_finite() {
        return Err(WeightFileError::NonFinite(name.to_string()));
    }
    Ok(m)
}
