//! Binary per-utterance feature file.
//!
//! Little-endian layout:
//!
//! | field            | type           |
//! |------------------|----------------|
//! | magic            | `b"SGFT"`      |
//! | version          | u16 (= 1)      |
//! | dtype            | u8 (0 = f32)   |
//! | modality         | u8 (0 = acoustic, 1 = text) |
//! | block_index      | u16            |
//! | T                | u32            |
//! | D                | u32            |
//! | utterance_index  | u32            |
//! | dialogue_id      | u16 length + UTF-8 bytes |
//! | payload          | T·D f32, row-major |
//! | checksum         | u32 CRC32 of payload |

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::Matrix;

pub const MAGIC: &[u8; 4] = b"SGFT";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Acoustic,
    Text,
}

impl Modality {
    pub fn code(self) -> u8 {
        match self {
            Modality::Acoustic => 0,
            Modality::Text => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Modality::Acoustic),
            1 => Some(Modality::Text),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F32,
}

impl Dtype {
    pub fn code(self) -> u8 {
        0
    }
}

/// Frame- or token-level features of one utterance for one modality and
/// one encoder block (0 = pre-Transformer output).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    pub dialogue_id: String,
    pub utterance_index: u32,
    pub modality: Modality,
    pub block_index: u16,
    pub data: Matrix<f32>,
    pub dtype: Dtype,
}

impl FeatureTensor {
    pub fn new(
        dialogue_id: impl Into<String>,
        utterance_index: u32,
        modality: Modality,
        block_index: u16,
        data: Matrix<f32>,
    ) -> Self {
        Self { dialogue_id: dialogue_id.into(), utterance_index, modality, block_index, data, dtype: Dtype::F32 }
    }

    pub fn frames(&self) -> usize {
        self.data.rows()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        if self.data.rows() == 0 || self.data.cols() == 0 {
            return Err(FormatError::EmptyShape { frames: self.data.rows(), dim: self.data.cols() });
        }
        if self.data.rows() > u32::MAX as usize || self.data.cols() > u32::MAX as usize {
            return Err(FormatError::EmptyShape { frames: self.data.rows(), dim: self.data.cols() });
        }
        if self.dialogue_id.len() > u16::MAX as usize {
            return Err(FormatError::IdTooLong(self.dialogue_id.len()));
        }
        if !self.data.is_finite() {
            return Err(FormatError::NonFinite);
        }
        Ok(())
    }
}

/// Classification of a failed encode or decode. Each malformed byte
/// stream maps to exactly one variant.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("unknown modality code {0}")]
    UnknownModality(u8),
    #[error("header truncated: needed {needed} bytes, file has {available}")]
    TruncatedHeader { needed: usize, available: usize },
    #[error("dialogue id is not valid UTF-8")]
    InvalidId,
    #[error("dialogue id of {0} bytes exceeds the u16 length prefix")]
    IdTooLong(usize),
    #[error("payload length mismatch: header implies {expected} bytes after the header, found {actual}")]
    LengthMismatch { expected: u64, actual: u64 },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("tensor shape {frames}x{dim} is empty or too large")]
    EmptyShape { frames: usize, dim: usize },
    #[error("tensor contains NaN or infinite values")]
    NonFinite,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Stable machine-readable name of each error class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatErrorKind {
    BadMagic,
    UnsupportedVersion,
    UnsupportedDtype,
    UnknownModality,
    TruncatedHeader,
    InvalidId,
    IdTooLong,
    LengthMismatch,
    ChecksumMismatch,
    EmptyShape,
    NonFinite,
    Io,
}

impl FormatError {
    pub fn kind(&self) -> FormatErrorKind {
        match self {
            FormatError::BadMagic(_) => FormatErrorKind::BadMagic,
            FormatError::UnsupportedVersion(_) => FormatErrorKind::UnsupportedVersion,
            FormatError::UnsupportedDtype(_) => FormatErrorKind::UnsupportedDtype,
            FormatError::UnknownModality(_) => FormatErrorKind::UnknownModality,
            FormatError::TruncatedHeader { .. } => FormatErrorKind::TruncatedHeader,
            FormatError::InvalidId => FormatErrorKind::InvalidId,
            FormatError::IdTooLong(_) => FormatErrorKind::IdTooLong,
            FormatError::LengthMismatch { .. } => FormatErrorKind::LengthMismatch,
            FormatError::ChecksumMismatch { .. } => FormatErrorKind::ChecksumMismatch,
            FormatError::EmptyShape { .. } => FormatErrorKind::EmptyShape,
            FormatError::NonFinite => FormatErrorKind::NonFinite,
            FormatError::Io(_) => FormatErrorKind::Io,
        }
    }
}

pub fn crc32(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}

/// Serializes a tensor, returning the file bytes and the payload CRC32.
pub fn encode(tensor: &FeatureTensor) -> Result<(Vec<u8>, u32), FormatError> {
    tensor.validate()?;
    let id = tensor.dialogue_id.as_bytes();
    let payload_len = tensor.data.len() * 4;
    let mut out = Vec::with_capacity(26 + id.len() + payload_len + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(tensor.dtype.code());
    out.push(tensor.modality.code());
    out.extend_from_slice(&tensor.block_index.to_le_bytes());
    out.extend_from_slice(&(tensor.data.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(tensor.data.cols() as u32).to_le_bytes());
    out.extend_from_slice(&tensor.utterance_index.to_le_bytes());
    out.extend_from_slice(&(id.len() as u16).to_le_bytes());
    out.extend_from_slice(id);
    let start = out.len();
    for v in tensor.data.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let checksum = crc32(&out[start..]);
    out.extend_from_slice(&checksum.to_le_bytes());
    Ok((out, checksum))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.bytes.len() - self.pos < n {
            return Err(FormatError::TruncatedHeader { needed: self.pos + n, available: self.bytes.len() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parses a feature file from bytes.
pub fn decode(bytes: &[u8]) -> Result<FeatureTensor, FormatError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4)?.try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let version = cur.u16()?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let dtype = cur.u8()?;
    if dtype != Dtype::F32.code() {
        return Err(FormatError::UnsupportedDtype(dtype));
    }
    let modality_code = cur.u8()?;
    let modality = Modality::from_code(modality_code).ok_or(FormatError::UnknownModality(modality_code))?;
    let block_index = cur.u16()?;
    let frames = cur.u32()? as usize;
    let dim = cur.u32()? as usize;
    let utterance_index = cur.u32()?;
    let id_len = cur.u16()? as usize;
    let id_bytes = cur.take(id_len)?;
    let dialogue_id = std::str::from_utf8(id_bytes).map_err(|_| FormatError::InvalidId)?.to_owned();

    let expected = (frames as u64) * (dim as u64) * 4 + 4;
    let actual = (bytes.len() - cur.pos) as u64;
    if expected != actual {
        return Err(FormatError::LengthMismatch { expected, actual });
    }
    let payload = &bytes[cur.pos..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let computed = crc32(payload);
    if stored != computed {
        return Err(FormatError::ChecksumMismatch { stored, computed });
    }
    if frames == 0 || dim == 0 {
        return Err(FormatError::EmptyShape { frames, dim });
    }
    let values: Vec<f32> =
        payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite);
    }
    let data = Matrix::from_vec(frames, dim, values).expect("length checked");
    Ok(FeatureTensor { dialogue_id, utterance_index, modality, block_index, data, dtype: Dtype::F32 })
}

/// Writes `tensor` to `path`, returning the payload CRC32.
pub fn write_feature_file(tensor: &FeatureTensor, path: impl AsRef<Path>) -> Result<u32, FormatError> {
    let (bytes, checksum) = encode(tensor)?;
    fs::write(path, bytes)?;
    Ok(checksum)
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureTensor, FormatError> {
    decode(&fs::read(path)?)
}
