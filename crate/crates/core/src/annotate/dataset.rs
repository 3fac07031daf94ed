//! On-disk triplet dataset: `dataset.json`, `embeddings.uadb`, and one
//! `maps/NNNNN.uadt` (float64 H×W) per triplet.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AffordanceTriplet, EmbeddingStore};
use crate::geom::Grid;
use crate::io::tensor::{read_tensor, write_atomic, write_tensor, Tensor};
use crate::{Error, Result};

pub const MANIFEST_NAME: &str = "dataset.json";
const LOCK_NAME: &str = "dataset.lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub object_id: String,
    /// Scene manifest the view belongs to (as given to the writer).
    pub scene: String,
    pub view: usize,
    pub instruction: String,
    pub region: u32,
    /// Map tensor, relative to the dataset directory.
    pub map: String,
    #[serde(default)]
    pub occluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub embedding_dim: usize,
    pub embeddings: String,
    pub entries: Vec<DatasetEntry>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::File { path: path.to_path_buf(), source })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn load_map(&self, root: &Path, entry: &DatasetEntry) -> Result<Grid<f64>> {
        let t = read_tensor(&root.join(&entry.map))?;
        match t.shape()[..] {
            [h, w] => Grid::from_vec(w, h, t.to_f64()),
            _ => Err(Error::shape(format!("{}: map must be H×W, got {:?}", entry.map, t.shape()))),
        }
    }

    pub fn load_embeddings(&self, root: &Path) -> Result<EmbeddingStore> {
        let s = EmbeddingStore::load(&root.join(&self.embeddings))?;
        if s.dim() != self.embedding_dim {
            return Err(Error::shape(format!("embedding store dim {} != manifest dim {}", s.dim(), self.embedding_dim)));
        }
        Ok(s)
    }
}

/// Single-writer append. Holding a writer holds `dataset.lock` in the
/// directory; a second writer on the same directory fails until the first is
/// finished or dropped.
pub struct DatasetWriter {
    dir: PathBuf,
    lock: PathBuf,
    store: EmbeddingStore,
    entries: Vec<DatasetEntry>,
}

impl DatasetWriter {
    pub fn create(dir: &Path, embedding_dim: usize) -> Result<Self> {
        let maps = dir.join("maps");
        std::fs::create_dir_all(&maps).map_err(|source| Error::File { path: maps.clone(), source })?;
        let lock = dir.join(LOCK_NAME);
        OpenOptions::new().write(true).create_new(true).open(&lock).map_err(|source| Error::File { path: lock.clone(), source })?;
        Ok(DatasetWriter { dir: dir.to_path_buf(), lock, store: EmbeddingStore::new(embedding_dim), entries: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn append(&mut self, t: &AffordanceTriplet, scene: &str) -> Result<&DatasetEntry> {
        let n = self.entries.len();
        let map = format!("maps/{n:05}.uadt");
        write_tensor(&self.dir.join(&map), &Tensor::f64(&[t.map.height, t.map.width], t.map.data.clone())?)?;
        if self.store.get(&t.instruction).is_none() {
            self.store.insert(t.instruction.clone(), t.embedding.clone())?;
        }
        self.entries.push(DatasetEntry {
            id: format!("{}/{:02}/{}", t.object_id, t.view, n),
            object_id: t.object_id.clone(),
            scene: scene.to_string(),
            view: t.view,
            instruction: t.instruction.clone(),
            region: t.region,
            map,
            occluded: t.occluded,
        });
        Ok(&self.entries[n])
    }

    /// Writes embeddings and the manifest, then releases the lock.
    pub fn finish(self) -> Result<DatasetManifest> {
        let embeddings = "embeddings.uadb".to_string();
        self.store.save(&self.dir.join(&embeddings))?;
        let manifest = DatasetManifest { embedding_dim: self.store.dim(), embeddings, entries: self.entries.clone() };
        write_atomic(&self.dir.join(MANIFEST_NAME), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        Ok(manifest)
    }
}

impl Drop for DatasetWriter {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.lock);
    }
}
