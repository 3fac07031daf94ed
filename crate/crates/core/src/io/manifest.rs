//! JSON scene manifests. Paths inside a manifest are relative to the
//! manifest's own directory.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};

use super::png::read_rgb_png;
use super::tensor::read_tensor;
use crate::fusion::ViewFeatures;
use crate::geom::{bilinear_upsample, CameraView, FeatureMap, Grid, Intrinsics};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub rgb: String,
    /// H×W depth tensor in metres (float32 or float64).
    pub depth: String,
    /// H×W uint8 foreground mask (non-zero = foreground).
    pub mask: String,
    /// Optional H×W per-pixel link ids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub links: Option<String>,
    /// Optional h×w×d feature tensor; resized bilinearly to H×W on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
    pub intrinsics: [[f64; 3]; 3],
    /// Camera-to-world, row-major.
    pub extrinsics: [[f64; 4]; 4],
    /// Category-image similarity for canonical-view selection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub allow_skew: bool,
    /// Optional ground-truth H×W uint8 part index map (0 = background).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part_labels: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkEntry {
    pub id: u32,
    pub name: String,
}

/// Ground-truth part description, present for generated scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartEntry {
    /// Value used for this part in the `part_labels` maps (1-based).
    pub index: u32,
    pub name: String,
    pub link_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub object_id: String,
    pub category: String,
    pub views: Vec<ViewEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<LinkEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    /// Embedding store bundle for instructions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parts: Vec<PartEntry>,
}

impl SceneManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::File { path: path.to_path_buf(), source })?;
        let m: SceneManifest = serde_json::from_str(&text)?;
        if m.views.is_empty() {
            return Err(Error::invalid(format!("{}: manifest has no views", path.display())));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        super::tensor::write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    /// Every file path the manifest references, resolved against `root`.
    pub fn referenced_files(&self, root: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for v in &self.views {
            out.push(root.join(&v.rgb));
            out.push(root.join(&v.depth));
            out.push(root.join(&v.mask));
            for p in [&v.links, &v.features, &v.part_labels].into_iter().flatten() {
                out.push(root.join(p));
            }
        }
        if let Some(e) = &self.embeddings {
            out.push(root.join(e));
        }
        out
    }
}

/// A manifest with its images, depth and (optionally) features loaded.
#[derive(Debug, Clone)]
pub struct Scene {
    pub manifest: SceneManifest,
    pub root: PathBuf,
    pub views: Vec<CameraView>,
    pub features: Option<Vec<ViewFeatures>>,
    pub part_maps: Option<Vec<Grid<u8>>>,
}

fn grid_from_tensor(path: &Path, w: usize, h: usize) -> Result<Vec<f64>> {
    let t = read_tensor(path)?;
    if t.shape() != [h, w] {
        return Err(Error::shape(format!("{}: expected {h}x{w}, got {:?}", path.display(), t.dims)));
    }
    Ok(t.to_f64())
}

pub fn load_features(path: &Path, w: usize, h: usize) -> Result<FeatureMap> {
    let t = read_tensor(path)?;
    let s = t.shape();
    if s.len() != 3 || s.contains(&0) {
        return Err(Error::shape(format!("{}: features must be h×w×d, got {:?}", path.display(), t.dims)));
    }
    let fm = FeatureMap::from_vec(s[1], s[0], s[2], t.to_f32())?;
    Ok(if s[0] == h && s[1] == w { fm } else { bilinear_upsample(&fm, h, w) })
}

impl Scene {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = SceneManifest::load(manifest_path)?;
        let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        for f in manifest.referenced_files(&root) {
            if !f.exists() {
                return Err(Error::invalid(format!("referenced file {} does not exist", f.display())));
            }
        }
        let mut views = Vec::with_capacity(manifest.views.len());
        for entry in &manifest.views {
            let rgb = read_rgb_png(&root.join(&entry.rgb))?;
            let (w, h) = (rgb.width, rgb.height);
            let depth = Grid::from_vec(w, h, grid_from_tensor(&root.join(&entry.depth), w, h)?)?;
            let mask = Grid::from_vec(w, h, grid_from_tensor(&root.join(&entry.mask), w, h)?.iter().map(|&m| m != 0.0).collect())?;
            let links = match &entry.links {
                Some(p) => Some(Grid::from_vec(w, h, grid_from_tensor(&root.join(p), w, h)?.iter().map(|&x| x as u32).collect())?),
                None => None,
            };
            let k = Matrix3::from_fn(|r, c| entry.intrinsics[r][c]);
            let e = Matrix4::from_fn(|r, c| entry.extrinsics[r][c]);
            views.push(CameraView::new(Intrinsics::new(k, entry.allow_skew)?, e, rgb, depth, mask, links)?);
        }
        let features = if manifest.views.iter().all(|v| v.features.is_some()) {
            let f: Result<Vec<_>> = manifest
                .views
                .iter()
                .zip(&views)
                .map(|(e, v)| load_features(&root.join(e.features.as_ref().unwrap()), v.width(), v.height()))
                .collect();
            Some(f?)
        } else {
            None
        };
        let part_maps = if manifest.views.iter().all(|v| v.part_labels.is_some()) {
            let p: Result<Vec<_>> = manifest
                .views
                .iter()
                .zip(&views)
                .map(|(e, v)| {
                    let t = read_tensor(&root.join(e.part_labels.as_ref().unwrap()))?;
                    Grid::from_vec(v.width(), v.height(), t.as_u8()?.to_vec())
                })
                .collect();
            Some(p?)
        } else {
            None
        };
        Ok(Scene { manifest, root, views, features, part_maps })
    }

    pub fn features(&self) -> Result<&[ViewFeatures]> {
        self.features.as_deref().ok_or_else(|| Error::invalid("scene manifest has no feature files"))
    }

    pub fn scores(&self) -> Option<Vec<f64>> {
        self.manifest.views.iter().map(|v| v.score).collect()
    }
}
