//! Named tensors with a JSON header, in one file.
//!
//! ```text
//! "UADB" | header_len u32 | header JSON | UADT tensor × header.tensors.len()
//! ```
//!
//! The header carries `tensors` (names, in payload order) and a free-form
//! `meta` object. Used for checkpoints, embedding stores and fused fields.

use std::path::Path;

use serde_json::Value;

use super::tensor::{write_atomic, Tensor, TensorError};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"UADB";

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub meta: Value,
    pub tensors: Vec<(String, Tensor)>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Header {
    tensors: Vec<String>,
    meta: Value,
}

impl Bundle {
    pub fn new(meta: Value) -> Self {
        Bundle { meta, tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t).ok_or_else(|| Error::invalid(format!("bundle has no tensor '{name}'")))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header =
            serde_json::to_vec(&Header { tensors: self.tensors.iter().map(|(n, _)| n.clone()).collect(), meta: self.meta.clone() })?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.tensors {
            out.extend_from_slice(&t.encode());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(TensorError::Truncated { section: "bundle header", expected: 8, found: bytes.len() }.into());
        }
        if &bytes[..4] != MAGIC {
            return Err(TensorError::BadMagic(bytes[..4].try_into().unwrap()).into());
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body =
            bytes.get(8..8 + len).ok_or(TensorError::Truncated { section: "bundle header", expected: len, found: bytes.len() - 8 })?;
        let header: Header = serde_json::from_slice(body)?;
        let mut pos = 8 + len;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for name in header.tensors {
            let (t, used) = Tensor::decode_prefix(&bytes[pos..])?;
            pos += used;
            tensors.push((name, t));
        }
        if pos != bytes.len() {
            return Err(TensorError::TrailingBytes(bytes.len() - pos).into());
        }
        Ok(Bundle { meta: header.meta, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| Error::File { path: path.to_path_buf(), source })?;
        Self::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let mut b = Bundle::new(serde_json::json!({"epoch": 3}));
        b.push("w", Tensor::f32(&[2], vec![1.0, f32::NAN]).unwrap());
        b.push("ids", Tensor::u8(&[1], vec![9]).unwrap());
        let bytes = b.encode().unwrap();
        let back = Bundle::decode(&bytes).unwrap();
        assert_eq!(back.meta["epoch"], 3);
        assert_eq!(back.get("ids").unwrap(), b.get("ids").unwrap());
        assert_eq!(back.get("w").unwrap().encode(), b.get("w").unwrap().encode());
        assert!(Bundle::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(back.get("missing").is_err());
    }
}
