//! Instruction → embedding store, persisted as a bundle with one `[n, e]`
//! float32 tensor whose rows follow `meta.instructions`.

use std::collections::BTreeMap;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use crate::io::bundle::Bundle;
use crate::io::tensor::Tensor;
use crate::{seed, Error, Result};

pub const DEFAULT_EMBEDDING_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    entries: BTreeMap<String, Vec<f32>>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore { dim, entries: BTreeMap::new() }
    }

    /// Stand-in for a text-embedding model: each instruction gets a unit
    /// vector drawn from a generator seeded by the instruction's hash.
    pub fn stub<S: AsRef<str>>(instructions: &[S], dim: usize, root_seed: u64) -> Self {
        let mut store = EmbeddingStore::new(dim);
        for s in instructions {
            store.entries.insert(s.as_ref().to_string(), stub_embedding(s.as_ref(), dim, root_seed));
        }
        store
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, instruction: &str) -> Option<&[f32]> {
        self.entries.get(instruction).map(Vec::as_slice)
    }

    pub fn insert(&mut self, instruction: impl Into<String>, v: Vec<f32>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::shape(format!("embedding has {} values, store dimension is {}", v.len(), self.dim)));
        }
        self.entries.insert(instruction.into(), v);
        Ok(())
    }

    pub fn instructions(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn to_bundle(&self) -> Result<Bundle> {
        let names: Vec<&String> = self.entries.keys().collect();
        let mut data = Vec::with_capacity(names.len() * self.dim);
        for v in self.entries.values() {
            data.extend_from_slice(v);
        }
        let mut b = Bundle::new(serde_json::json!({ "kind": "embeddings", "dim": self.dim, "instructions": names }));
        b.push("embeddings", Tensor::f32(&[names.len(), self.dim], data)?);
        Ok(b)
    }

    pub fn from_bundle(b: &Bundle) -> Result<Self> {
        let names: Vec<String> = serde_json::from_value(b.meta.get("instructions").cloned().unwrap_or_default())
            .map_err(|e| Error::invalid(format!("embedding store: bad instruction list: {e}")))?;
        let t = b.get("embeddings")?;
        let shape = t.shape();
        if shape.len() != 2 || shape[0] != names.len() {
            return Err(Error::shape(format!("embedding tensor {shape:?} does not match {} instructions", names.len())));
        }
        let dim = shape[1];
        if let Some(d) = b.meta.get("dim").and_then(|d| d.as_u64()) {
            if d as usize != dim {
                return Err(Error::shape(format!("embedding store says dim {d} but tensor has {dim}")));
            }
        }
        let data = t.to_f32();
        let entries = names.into_iter().enumerate().map(|(i, n)| (n, data[i * dim..(i + 1) * dim].to_vec())).collect();
        Ok(EmbeddingStore { dim, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_bundle()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bundle(&Bundle::read(path)?)
    }
}

/// Anything that can turn an instruction into an embedding.
pub trait EmbeddingSource: Sync {
    fn dim(&self) -> usize;
    fn embed(&self, instruction: &str) -> Option<Vec<f32>>;
}

impl EmbeddingSource for EmbeddingStore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, instruction: &str) -> Option<Vec<f32>> {
        self.get(instruction).map(<[f32]>::to_vec)
    }
}

/// Embeds any instruction with [`stub_embedding`]; for runs without a
/// text-embedding model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StubEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl EmbeddingSource for StubEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, instruction: &str) -> Option<Vec<f32>> {
        Some(stub_embedding(instruction, self.dim, self.seed))
    }
}

pub fn stub_embedding(instruction: &str, dim: usize, root_seed: u64) -> Vec<f32> {
    let mut rng = seed::rng(root_seed, &format!("embedding/{instruction}"));
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| (x / norm) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_vectors_are_unit_and_stable() {
        let a = stub_embedding("grasp the handle", 32, 7);
        let b = stub_embedding("grasp the handle", 32, 7);
        let c = stub_embedding("drink from the rim", 32, 7);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let n: f32 = a.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-5);
    }

    #[test]
    fn round_trip() {
        let s = EmbeddingStore::stub(&["a", "b", "c"], 8, 1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.uadb");
        s.save(&p).unwrap();
        assert_eq!(EmbeddingStore::load(&p).unwrap(), s);
    }

    #[test]
    fn stub_embedder_matches_stub_store() {
        let store = EmbeddingStore::stub(&["a"], 8, 3);
        let stub = StubEmbedder { dim: 8, seed: 3 };
        assert_eq!(stub.embed("a"), store.embed("a"));
        assert_eq!(store.embed("b"), None);
    }

    #[test]
    fn rejects_wrong_dim() {
        let mut s = EmbeddingStore::new(4);
        assert!(s.insert("x", vec![0.0; 3]).is_err());
    }
}
