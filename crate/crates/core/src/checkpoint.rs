//! Named-tensor checkpoint files.
//!
//! Layout: 4-byte magic, version u16, metadata length u32 and UTF-8
//! `key=value` metadata, tensor count u32, then per tensor: name length u16,
//! name, rank u8, dims u32 each, values as f64. All little-endian.

use std::collections::HashMap;
use std::path::Path;

use crate::config::KeyValues;
use crate::error::{Error, FormatError, Result};
use crate::ndiff::{ParamStore, Tensor};

pub const CHECKPOINT_VERSION: u16 = 1;

/// Decoded checkpoint contents.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: KeyValues,
    pub tensors: HashMap<String, Tensor<f64>>,
}

pub fn encode(magic: [u8; 4], meta: &KeyValues, store: &ParamStore<f64>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&magic);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let text = meta.render();
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.named() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.ndim() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.at + n;
        if end > self.b.len() {
            return Err(FormatError::Truncated { expected: end, actual: self.b.len() });
        }
        let s = &self.b[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        let s = self.take(2)?;
        Ok(u16::from_le_bytes([s[0], s[1]]))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        let s = self.take(4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    }
}

pub fn decode(magic: [u8; 4], bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { b: bytes, at: 0 };
    let found = r.take(4)?;
    if found != magic {
        return Err(FormatError::MagicMismatch { expected: magic, found: [found[0], found[1], found[2], found[3]] }.into());
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::UnsupportedVersion { found: version, supported: CHECKPOINT_VERSION }.into());
    }
    let meta_len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(meta_len)?).map_err(|_| FormatError::Malformed("metadata is not UTF-8".into()))?;
    let meta = KeyValues::parse(text).map_err(|e| FormatError::Malformed(format!("metadata: {e}")))?;
    let count = r.u32()? as usize;
    let mut tensors = HashMap::with_capacity(count);
    for _ in 0..count {
        let n = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(n)?).map_err(|_| FormatError::Malformed("tensor name is not UTF-8".into()))?.to_string();
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = r.take(numel * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        let t = Tensor::new(shape, data)?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(FormatError::Malformed(format!("duplicate tensor {name}")).into());
        }
    }
    if r.at != bytes.len() {
        return Err(FormatError::Malformed(format!("{} trailing bytes", bytes.len() - r.at)).into());
    }
    Ok(Checkpoint { meta, tensors })
}

pub fn write(path: &Path, magic: [u8; 4], meta: &KeyValues, store: &ParamStore<f64>) -> Result<()> {
    std::fs::write(path, encode(magic, meta, store))?;
    Ok(())
}

/// Reads a checkpoint; every failure is reported as a checkpoint error.
pub fn read(path: &Path, magic: [u8; 4]) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    decode(magic, &bytes).map_err(|e| match e {
        Error::Checkpoint(_) => e,
        other => Error::Checkpoint(format!("{}: {other}", path.display())),
    })
}
