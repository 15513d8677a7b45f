//! Reader for the IDX byte format (big-endian header, raw `u8` payload).

use std::path::Path;

use crate::error::{LscError, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    /// Items along the first dimension.
    pub fn len(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bytes per item.
    pub fn item_len(&self) -> usize {
        self.dims[1..].iter().product()
    }

    pub fn item(&self, i: usize) -> &[u8] {
        let n = self.item_len();
        &self.data[i * n..(i + 1) * n]
    }
}

pub fn parse_idx(bytes: &[u8], expected_magic: u32) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(LscError::Config("IDX file shorter than its magic number".into()));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
    if magic != expected_magic {
        return Err(LscError::Config(format!("IDX magic {magic:#010x}, expected {expected_magic:#010x}")));
    }
    let rank = (magic & 0xff) as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(LscError::Config("IDX header truncated".into()));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize)
        .collect();
    let total: usize = dims.iter().product();
    if bytes.len() - header != total {
        return Err(LscError::Config(format!("IDX payload has {} bytes, dims {dims:?} need {total}", bytes.len() - header)));
    }
    Ok(IdxArray { dims, data: bytes[header..].to_vec() })
}

pub fn read_idx(path: &Path, expected_magic: u32) -> Result<IdxArray> {
    let bytes = std::fs::read(path).map_err(|e| LscError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_idx(&bytes, expected_magic)
}

/// Serializes `dims` and `data` with the given magic.
pub fn encode_idx(magic: u32, dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend_from_slice(&(*d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}
