//! Binary parameter checkpoints.
//!
//! Layout, little-endian: magic `SGCK`, `u16` version, `u32` metadata length
//! and UTF-8 JSON metadata, `u32` parameter count, then per parameter
//! `u16` name length, name, `u32` rows, `u32` cols and the `f32` values.
//! A trailing `u32` CRC32 covers every preceding byte.

use std::path::Path;

use crate::feature_store::crc32;
use crate::nn::{Matrix, ParamStore};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SGCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("invalid checkpoint contents: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub fn encode_checkpoint(meta: &serde_json::Value, store: &ParamStore<f32>) -> Result<Vec<u8>, CheckpointError> {
    let meta = serde_json::to_vec(meta).map_err(|e| CheckpointError::Invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + meta.len() + store.num_scalars() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, m) in store.iter() {
        let name_len =
            u16::try_from(name.len()).map_err(|_| CheckpointError::Invalid(format!("parameter name too long: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(CheckpointError::Truncated)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(serde_json::Value, ParamStore<f32>), CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 14 {
        return Err(CheckpointError::Truncated);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let computed = crc32(body);
    if computed != stored {
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }
    let meta_len = r.u32()? as usize;
    let meta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| CheckpointError::Invalid(e.to_string()))?;
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::Invalid("parameter name is not UTF-8".into()))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let n = rows.checked_mul(cols).and_then(|n| n.checked_mul(4)).ok_or(CheckpointError::Truncated)?;
        let data = r.take(n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let m = Matrix::from_vec(rows, cols, data).map_err(|e| CheckpointError::Invalid(e.to_string()))?;
        store.add(name, m);
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Invalid(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok((meta, store))
}

/// Writes a checkpoint and returns its CRC32.
pub fn write_checkpoint(
    path: impl AsRef<Path>,
    meta: &serde_json::Value,
    store: &ParamStore<f32>,
) -> Result<u32, CheckpointError> {
    let bytes = encode_checkpoint(meta, store)?;
    std::fs::write(path, &bytes)?;
    Ok(u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes")))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(serde_json::Value, ParamStore<f32>), CheckpointError> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("a.weight", Matrix::from_fn(2, 3, |i, j| i as f32 - j as f32 * 0.5));
        s.add("a.bias", Matrix::zeros(1, 3));
        s
    }

    #[test]
    fn round_trip() {
        let meta = json!({"architecture": "ad", "input_dim": 2});
        let bytes = encode_checkpoint(&meta, &store()).unwrap();
        let (m, s) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(m, meta);
        assert_eq!(s.values(), store().values());
        assert_eq!(s.name(s.ids().next().unwrap()), "a.weight");
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let mut bytes = encode_checkpoint(&json!({}), &store()).unwrap();
        let i = bytes.len() - 8;
        bytes[i] ^= 0x01;
        assert!(matches!(decode_checkpoint(&bytes), Err(CheckpointError::ChecksumMismatch { .. })));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let bytes = encode_checkpoint(&json!({}), &store()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(CheckpointError::BadMagic)));
        assert!(decode_checkpoint(&bytes[..10]).is_err());
    }
}
