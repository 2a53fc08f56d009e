//! Single-file container: a JSON header followed by little-endian binary blocks.
//!
//! Layout: `b"EGRC"`, `u32` format version, `u32` header length, UTF-8 JSON
//! header, then the blocks back to back in header order. The header carries a
//! caller-defined `meta` object plus a block table (name, dtype, element count).

use std::io::{Read, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"EGRC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad header: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a container file (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    Version(u32),
    #[error("missing block `{0}`")]
    MissingBlock(String),
    #[error("block `{name}` has dtype {found}, expected {expected}")]
    WrongType { name: String, found: String, expected: String },
    #[error("truncated container")]
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    U32,
    U16,
    U8,
}

impl DType {
    fn size(self) -> usize {
        match self {
            DType::F32 | DType::U32 => 4,
            DType::U16 => 2,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub dtype: DType,
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header<M> {
    meta: M,
    blocks: Vec<BlockInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockData {
    F32(Vec<f32>),
    U32(Vec<u32>),
    U16(Vec<u16>),
    U8(Vec<u8>),
}

impl BlockData {
    fn dtype(&self) -> DType {
        match self {
            BlockData::F32(_) => DType::F32,
            BlockData::U32(_) => DType::U32,
            BlockData::U16(_) => DType::U16,
            BlockData::U8(_) => DType::U8,
        }
    }

    fn len(&self) -> usize {
        match self {
            BlockData::F32(v) => v.len(),
            BlockData::U32(v) => v.len(),
            BlockData::U16(v) => v.len(),
            BlockData::U8(v) => v.len(),
        }
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            BlockData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            BlockData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            BlockData::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            BlockData::U8(v) => out.extend_from_slice(v),
        }
    }

    fn read_le(dtype: DType, bytes: &[u8]) -> Self {
        match dtype {
            DType::F32 => BlockData::F32(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            DType::U32 => BlockData::U32(bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect()),
            DType::U16 => BlockData::U16(bytes.chunks_exact(2).map(|c| u16::from_le_bytes(c.try_into().unwrap())).collect()),
            DType::U8 => BlockData::U8(bytes.to_vec()),
        }
    }
}

/// In-memory container contents.
#[derive(Debug, Clone)]
pub struct Container<M> {
    pub meta: M,
    blocks: Vec<(String, BlockData)>,
}

impl<M: Serialize + DeserializeOwned> Container<M> {
    pub fn new(meta: M) -> Self {
        Self { meta, blocks: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, data: BlockData) -> &mut Self {
        self.blocks.push((name.into(), data));
        self
    }

    pub fn block_names(&self) -> impl Iterator<Item = &str> {
        self.blocks.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Result<&BlockData, ContainerError> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d)
            .ok_or_else(|| ContainerError::MissingBlock(name.to_string()))
    }

    pub fn has(&self, name: &str) -> bool {
        self.blocks.iter().any(|(n, _)| n == name)
    }

    pub fn f32(&self, name: &str) -> Result<&[f32], ContainerError> {
        match self.get(name)? {
            BlockData::F32(v) => Ok(v),
            other => Err(wrong(name, other, "f32")),
        }
    }

    pub fn u32(&self, name: &str) -> Result<&[u32], ContainerError> {
        match self.get(name)? {
            BlockData::U32(v) => Ok(v),
            other => Err(wrong(name, other, "u32")),
        }
    }

    pub fn u16(&self, name: &str) -> Result<&[u16], ContainerError> {
        match self.get(name)? {
            BlockData::U16(v) => Ok(v),
            other => Err(wrong(name, other, "u16")),
        }
    }

    pub fn u8(&self, name: &str) -> Result<&[u8], ContainerError> {
        match self.get(name)? {
            BlockData::U8(v) => Ok(v),
            other => Err(wrong(name, other, "u8")),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ContainerError> {
        let header = Header {
            meta: &self.meta,
            blocks: self
                .blocks
                .iter()
                .map(|(n, d)| BlockInfo { name: n.clone(), dtype: d.dtype(), len: d.len() })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + json.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, d) in &self.blocks {
            d.write_le(&mut out);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        if bytes.len() < 12 {
            return Err(ContainerError::Truncated);
        }
        if &bytes[0..4] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(ContainerError::Version(version));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes.get(12..12 + hlen).ok_or(ContainerError::Truncated)?;
        let header: Header<M> = serde_json::from_slice(body)?;
        let mut off = 12 + hlen;
        let mut blocks = Vec::with_capacity(header.blocks.len());
        for info in header.blocks {
            let n = info.len * info.dtype.size();
            let raw = bytes.get(off..off + n).ok_or(ContainerError::Truncated)?;
            blocks.push((info.name, BlockData::read_le(info.dtype, raw)));
            off += n;
        }
        Ok(Self { meta: header.meta, blocks })
    }

    pub fn write(&self, w: &mut impl Write) -> Result<(), ContainerError> {
        w.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self, ContainerError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: &Path) -> Result<(), ContainerError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ContainerError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn wrong(name: &str, found: &BlockData, expected: &str) -> ContainerError {
    ContainerError::WrongType {
        name: name.to_string(),
        found: format!("{:?}", found.dtype()).to_lowercase(),
        expected: expected.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    struct Meta {
        kind: String,
        step: u64,
    }

    #[test]
    fn round_trip_blocks() {
        let mut c = Container::new(Meta { kind: "x".into(), step: 7 });
        c.push("w", BlockData::F32(vec![1.0, -2.5, f32::MAX]))
            .push("idx", BlockData::U32(vec![1, 2, 3]))
            .push("bits", BlockData::U8(vec![0xff, 0x01]));
        let back = Container::<Meta>::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back.meta, c.meta);
        assert_eq!(back.f32("w").unwrap(), &[1.0, -2.5, f32::MAX]);
        assert_eq!(back.u32("idx").unwrap(), &[1, 2, 3]);
        assert!(matches!(back.f32("idx"), Err(ContainerError::WrongType { .. })));
        assert!(matches!(back.f32("nope"), Err(ContainerError::MissingBlock(_))));
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(Container::<Meta>::from_bytes(b"nope-nope-nope"), Err(ContainerError::BadMagic)));
        let mut c = Container::new(Meta { kind: "x".into(), step: 0 });
        c.push("w", BlockData::F32(vec![1.0; 8]));
        let bytes = c.to_bytes().unwrap();
        assert!(matches!(Container::<Meta>::from_bytes(&bytes[..bytes.len() - 3]), Err(ContainerError::Truncated)));
    }
}
