//! Binary checkpoint container. Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "GSCLSCKP"
//! version    u32       currently 1
//! meta_len   u32
//! metadata   meta_len bytes of UTF-8 (JSON by convention)
//! count      u32       number of tensors
//! per tensor:
//!   name_len u16
//!   name     name_len bytes of UTF-8, unique within the file
//!   rank     u8        at most 8
//!   dims     rank × u64
//!   values   prod(dims) × f64
//! ```
//!
//! Nothing may follow the last tensor.

use thiserror::Error;

use super::{Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GSCLSCKP";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_RANK: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("invalid UTF-8 at byte {0}")]
    InvalidUtf8(usize),
    #[error("tensor at byte {0} has an invalid shape")]
    BadShape(usize),
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("name `{0}` is too long to encode")]
    NameTooLong(String),
}

impl CheckpointError {
    pub fn code(&self) -> &'static str {
        match self {
            CheckpointError::BadMagic => "BadMagic",
            CheckpointError::UnsupportedVersion(_) => "UnsupportedVersion",
            CheckpointError::Truncated(_) => "Truncated",
            CheckpointError::InvalidUtf8(_) => "InvalidUtf8",
            CheckpointError::BadShape(_) => "BadShape",
            CheckpointError::DuplicateName(_) => "DuplicateName",
            CheckpointError::TrailingBytes(_) => "TrailingBytes",
            CheckpointError::MissingTensor(_) => "MissingTensor",
            CheckpointError::NameTooLong(_) => "NameTooLong",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: String,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &t.tensor)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))
    }

    pub fn encode(&self) -> Result<Vec<u8>, CheckpointError> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        out.extend_from_slice(self.metadata.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut names = std::collections::HashSet::new();
        for t in &self.tensors {
            if !names.insert(t.name.as_str()) {
                return Err(CheckpointError::DuplicateName(t.name.clone()));
            }
            let name_len = u16::try_from(t.name.len())
                .map_err(|_| CheckpointError::NameTooLong(t.name.clone()))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            let shape = t.tensor.shape();
            if shape.len() > MAX_RANK {
                return Err(CheckpointError::BadShape(out.len()));
            }
            out.push(shape.len() as u8);
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.tensor.data() {
                out.extend_from_slice(&(v as f64).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let meta_len = r.u32()? as usize;
        let meta_at = r.pos;
        let metadata = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| CheckpointError::InvalidUtf8(meta_at))?
            .to_string();
        let count = r.u32()? as usize;
        let mut tensors: Vec<NamedTensor> = Vec::new();
        let mut names = std::collections::HashSet::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name_at = r.pos;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| CheckpointError::InvalidUtf8(name_at))?
                .to_string();
            if !names.insert(name.clone()) {
                return Err(CheckpointError::DuplicateName(name));
            }
            let shape_at = r.pos;
            let rank = r.u8()? as usize;
            if rank > MAX_RANK {
                return Err(CheckpointError::BadShape(shape_at));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut len: usize = 1;
            for _ in 0..rank {
                let d = usize::try_from(r.u64()?).map_err(|_| CheckpointError::BadShape(shape_at))?;
                len = len.checked_mul(d).ok_or(CheckpointError::BadShape(shape_at))?;
                shape.push(d);
            }
            let byte_len = len.checked_mul(8).ok_or(CheckpointError::BadShape(shape_at))?;
            let raw = r.take(byte_len)?;
            let data: Vec<Real> = raw
                .chunks_exact(8)
                .map(|c| {
                    let mut b = [0u8; 8];
                    b.copy_from_slice(c);
                    f64::from_le_bytes(b) as Real
                })
                .collect();
            let tensor =
                Tensor::new(shape, data).map_err(|_| CheckpointError::BadShape(shape_at))?;
            tensors.push(NamedTensor { name, tensor });
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Checkpoint { metadata, tensors })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated(self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        let mut b = [0u8; 8];
        b.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(b))
    }
}
