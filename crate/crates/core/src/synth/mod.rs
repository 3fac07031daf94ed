//! Deterministic synthetic scenes with analytic ground truth.
//!
//! Objects are unions of primitives grouped into named parts. Each part owns a
//! feature signature; rendered feature maps carry the owning part's signature
//! plus seeded Gaussian noise, standing in for a frozen vision backbone.

pub mod fixtures;
mod shapes;

use std::path::Path;

use nalgebra::Matrix4;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

pub use fixtures::{bottle, cabinet, corpus, hammer, kettle, mug, pan, two_part_slab, unit_box_frontal};
pub use shapes::{Pose, Primitive, Shape};

use crate::annotate::vlm::{FixtureProposal, MockFixture};
use crate::geom::{look_at, CameraView, FeatureMap, Grid, Intrinsics, Point3, PointCloud, RgbImage, Vec3};
use crate::io::manifest::{LinkEntry, PartEntry, SceneManifest, ViewEntry};
use crate::io::png::write_rgb_png;
use crate::io::tensor::{write_tensor, Tensor};
use crate::{par, seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthPart {
    pub name: String,
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub link_id: u32,
    /// Explicit feature signature; drawn at random when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<Vec<f64>>,
    pub color: [u8; 3],
    /// Task the mock VLM associates with this part.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraLayout {
    /// Spherical Fibonacci spiral over the elevation band.
    Fibonacci,
    /// Evenly spaced azimuths at `min_elevation_deg`.
    Ring,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub count: usize,
    pub radius: f64,
    pub min_elevation_deg: f64,
    pub max_elevation_deg: f64,
    pub layout: CameraLayout,
    pub fov_deg: f64,
    pub target: [f64; 3],
    #[serde(default = "default_min_azimuth")]
    pub min_azimuth_deg: f64,
    #[serde(default = "default_max_azimuth")]
    pub max_azimuth_deg: f64,
}

fn default_min_azimuth() -> f64 {
    -180.0
}

fn default_max_azimuth() -> f64 {
    180.0
}

impl Default for CameraRig {
    fn default() -> Self {
        CameraRig {
            count: 14,
            radius: 0.3,
            min_elevation_deg: 10.0,
            max_elevation_deg: 70.0,
            layout: CameraLayout::Fibonacci,
            fov_deg: 40.0,
            target: [0.0; 3],
            min_azimuth_deg: -180.0,
            max_azimuth_deg: 180.0,
        }
    }
}

impl CameraRig {
    pub fn eyes(&self) -> Vec<Point3> {
        let golden = (3.0 - 5f64.sqrt()) / 2.0;
        let (lo, hi) = (self.min_elevation_deg.to_radians().sin(), self.max_elevation_deg.to_radians().sin());
        let (az0, az1) = (self.min_azimuth_deg.to_radians(), self.max_azimuth_deg.to_radians());
        let full = self.max_azimuth_deg - self.min_azimuth_deg >= 360.0;
        (0..self.count)
            .map(|i| {
                let (elev, frac) = match self.layout {
                    CameraLayout::Ring => {
                        let steps = if full || self.count == 1 { self.count } else { self.count - 1 };
                        (self.min_elevation_deg.to_radians(), i as f64 / steps.max(1) as f64)
                    }
                    CameraLayout::Fibonacci => {
                        let s = if self.count > 1 { lo + (hi - lo) * i as f64 / (self.count - 1) as f64 } else { lo };
                        (s.asin(), (golden * i as f64).fract())
                    }
                };
                let azim = az0 + (az1 - az0) * frac;
                let t = Vec3::from(self.target);
                Point3::from(t + self.radius * Vec3::new(elev.cos() * azim.cos(), elev.cos() * azim.sin(), elev.sin()))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub object_id: String,
    pub category: String,
    pub parts: Vec<SynthPart>,
    pub cameras: CameraRig,
    pub width: usize,
    pub height: usize,
    pub feature_dim: usize,
    /// Per-component feature noise as a fraction of the signature norm.
    pub noise: f64,
    /// Minimum pairwise angle between signatures (including background).
    pub signature_margin_deg: f64,
    /// Direction (from the target) the canonical-view score favours.
    pub canonical_direction: [f64; 3],
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(object_id: &str, category: &str, parts: Vec<SynthPart>) -> Self {
        SynthSpec {
            object_id: object_id.into(),
            category: category.into(),
            parts,
            cameras: CameraRig::default(),
            width: 48,
            height: 48,
            feature_dim: 16,
            noise: 0.05,
            signature_margin_deg: 60.0,
            canonical_direction: [1.0, -1.0, 0.8],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.parts.is_empty() || self.parts.len() > 254 {
            return Err(Error::invalid("scene needs 1..=254 parts"));
        }
        if self.cameras.count == 0 || self.width == 0 || self.height == 0 || self.feature_dim == 0 {
            return Err(Error::invalid("camera count, image size and feature dim must be positive"));
        }
        for p in &self.parts {
            if p.primitives.is_empty() {
                return Err(Error::invalid(format!("part {} has no primitives", p.name)));
            }
            p.primitives.iter().try_for_each(Primitive::validate)?;
            if let Some(s) = &p.signature {
                if s.len() != self.feature_dim {
                    return Err(Error::shape(format!("signature of {} has wrong dimension", p.name)));
                }
            }
        }
        Ok(())
    }
}

/// A rendered scene held in memory.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub spec: SynthSpec,
    pub views: Vec<CameraView>,
    pub features: Vec<FeatureMap>,
    /// Per view, 1-based part index per pixel, 0 for background.
    pub part_maps: Vec<Grid<u8>>,
    pub scores: Vec<f64>,
    /// Per part, then the background signature last.
    pub signatures: Vec<Vec<f64>>,
}

fn angle_deg(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

fn draw_signatures(spec: &SynthSpec) -> Result<Vec<Vec<f64>>> {
    let mut rng = seed::rng(spec.seed, "synth/signatures");
    let mut sigs: Vec<Option<Vec<f64>>> = spec.parts.iter().map(|p| p.signature.clone()).collect();
    sigs.push(None);
    let mut fixed: Vec<Vec<f64>> = sigs.iter().flatten().cloned().collect();
    for s in sigs.iter_mut().filter(|s| s.is_none()) {
        let mut found = None;
        for _ in 0..10_000 {
            let mut v: Vec<f64> = (0..spec.feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= n);
            if fixed.iter().all(|f| angle_deg(f, &v) >= spec.signature_margin_deg) {
                found = Some(v);
                break;
            }
        }
        let v = found.ok_or_else(|| Error::invalid("cannot place signatures with the requested margin"))?;
        fixed.push(v.clone());
        *s = Some(v);
    }
    Ok(sigs.into_iter().map(Option::unwrap).collect())
}

pub fn intrinsics_for(spec: &SynthSpec) -> Intrinsics {
    let f = (spec.width as f64 / 2.0) / (spec.cameras.fov_deg.to_radians() / 2.0).tan();
    Intrinsics::from_focal(f, f, (spec.width as f64 - 1.0) / 2.0, (spec.height as f64 - 1.0) / 2.0).unwrap()
}

/// Renders depth, masks, link and part maps, flat-coloured RGB and noisy
/// signature features for every camera in the rig.
pub fn render_scene(spec: &SynthSpec) -> Result<SynthScene> {
    spec.validate()?;
    let signatures = draw_signatures(spec)?;
    let k = intrinsics_for(spec);
    let target = Point3::from(spec.cameras.target);
    let eyes = spec.cameras.eyes();
    let multi_link = spec.parts.iter().any(|p| p.link_id != spec.parts[0].link_id);
    let (w, h, d) = (spec.width, spec.height, spec.feature_dim);

    let rendered = par::map_range(eyes.len(), |vi| -> Result<(CameraView, FeatureMap, Grid<u8>)> {
        let extr: Matrix4<f64> = look_at(eyes[vi], target, Vec3::z())?;
        let rot = extr.fixed_view::<3, 3>(0, 0).into_owned();
        let mut depth = Grid::filled(w, h, 0.0);
        let mut mask = Grid::filled(w, h, false);
        let mut links = Grid::filled(w, h, 0u32);
        let mut parts = Grid::filled(w, h, 0u8);
        let mut rgb = RgbImage::new(w, h);
        let mut feats = FeatureMap::zeros(w, h, d);
        let mut rng = seed::rng(spec.seed, &format!("synth/features/{vi}"));
        for row in 0..h {
            for col in 0..w {
                // ray parameterised so the parameter equals camera-frame depth
                let dir_cam = k.unproject(col as f64, row as f64, 1.0);
                let dir = rot * dir_cam;
                let mut hit: Option<(f64, usize)> = None;
                for (pi, part) in spec.parts.iter().enumerate() {
                    for prim in &part.primitives {
                        if let Some(t) = prim.intersect(&eyes[vi], &dir) {
                            if hit.is_none_or(|(bt, _)| t < bt) {
                                hit = Some((t, pi));
                            }
                        }
                    }
                }
                let owner = match hit {
                    Some((t, pi)) => {
                        depth.set(row, col, t);
                        mask.set(row, col, true);
                        links.set(row, col, spec.parts[pi].link_id);
                        parts.set(row, col, pi as u8 + 1);
                        rgb.put(row, col, spec.parts[pi].color);
                        pi
                    }
                    None => {
                        rgb.put(row, col, [24, 24, 24]);
                        spec.parts.len()
                    }
                };
                let sig = &signatures[owner];
                let norm = sig.iter().map(|x| x * x).sum::<f64>().sqrt();
                let noise = Normal::new(0.0, (spec.noise * norm).max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
                for (f, &s) in feats.pixel_mut(row, col).iter_mut().zip(sig) {
                    let n: f64 = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    *f = (s + n) as f32;
                }
            }
        }
        let view = CameraView::new(k, extr, rgb, depth, mask, multi_link.then_some(links))?;
        Ok((view, feats, parts))
    });

    let mut views = Vec::new();
    let mut features = Vec::new();
    let mut part_maps = Vec::new();
    for r in rendered {
        let (v, f, p) = r?;
        views.push(v);
        features.push(f);
        part_maps.push(p);
    }
    let pref = Vec3::from(spec.canonical_direction).normalize();
    let scores = eyes.iter().map(|e| 0.25 + 0.05 * (e - target).normalize().dot(&pref)).collect();
    Ok(SynthScene { spec: spec.clone(), views, features, part_maps, scores, signatures })
}

impl SynthScene {
    /// Ground-truth mask of 1-based part `index` in view `view`.
    pub fn gt_mask(&self, view: usize, index: u8) -> Grid<bool> {
        self.part_maps[view].map(|&p| p == index)
    }

    /// Ground-truth 1-based part index of every cloud point (0 if unknown).
    pub fn point_parts(&self, cloud: &PointCloud) -> Vec<u32> {
        cloud.source_view.iter().zip(&cloud.source_pixel).map(|(&v, &px)| self.part_maps[v as usize].data[px as usize] as u32).collect()
    }

    pub fn canonical_view(&self) -> usize {
        crate::annotate::select_canonical_view(&self.scores).unwrap_or(0)
    }

    /// Mock-VLM fixture pointing, for each instructed part visible in the
    /// canonical view, at the part's most interior pixel.
    pub fn mock_fixture(&self) -> MockFixture {
        let v = self.canonical_view();
        let pm = &self.part_maps[v];
        let mut proposals = Vec::new();
        for (pi, part) in self.spec.parts.iter().enumerate() {
            let Some(instr) = &part.instruction else { continue };
            let idx = pi as u8 + 1;
            let mut best: Option<(usize, usize, usize)> = None;
            for row in 0..pm.height {
                for col in 0..pm.width {
                    if *pm.get(row, col) != idx {
                        continue;
                    }
                    // chessboard distance to the nearest pixel of another label
                    let mut depth = 0;
                    'grow: for r in 1..pm.width.max(pm.height) {
                        for dr in -(r as i64)..=(r as i64) {
                            for dc in -(r as i64)..=(r as i64) {
                                if dr.abs() != r as i64 && dc.abs() != r as i64 {
                                    continue;
                                }
                                let (rr, cc) = (row as i64 + dr, col as i64 + dc);
                                if rr < 0
                                    || cc < 0
                                    || rr >= pm.height as i64
                                    || cc >= pm.width as i64
                                    || *pm.get(rr as usize, cc as usize) != idx
                                {
                                    break 'grow;
                                }
                            }
                        }
                        depth = r;
                    }
                    if best.is_none_or(|b| depth > b.0) {
                        best = Some((depth, row, col));
                    }
                }
            }
            if let Some((_, row, col)) = best {
                proposals.push(FixtureProposal { instruction: instr.clone(), region_id: None, pixel: Some([row, col]) });
            }
        }
        let mut fx = MockFixture::default();
        fx.categories.insert(self.spec.category.clone(), proposals);
        fx
    }

    /// Writes the scene as manifest + tensor/PNG files under `dir` and returns
    /// the manifest. Also writes `vlm_fixture.json` and `synth_spec.json`.
    pub fn write(&self, dir: &Path) -> Result<SceneManifest> {
        std::fs::create_dir_all(dir).map_err(|source| Error::File { path: dir.to_path_buf(), source })?;
        let (w, h, d) = (self.spec.width, self.spec.height, self.spec.feature_dim);
        let mut entries = Vec::new();
        for (i, v) in self.views.iter().enumerate() {
            let name = |s: &str| format!("view{i:02}_{s}");
            write_rgb_png(&dir.join(name("rgb.png")), &v.rgb)?;
            write_tensor(&dir.join(name("depth.uadt")), &Tensor::f64(&[h, w], v.depth.data.clone())?)?;
            write_tensor(&dir.join(name("mask.uadt")), &Tensor::u8(&[h, w], v.fg_mask.data.iter().map(|&m| m as u8).collect())?)?;
            write_tensor(&dir.join(name("feat.uadt")), &Tensor::f32(&[h, w, d], self.features[i].data.clone())?)?;
            write_tensor(&dir.join(name("parts.uadt")), &Tensor::u8(&[h, w], self.part_maps[i].data.clone())?)?;
            let links = match &v.link_map {
                Some(l) => {
                    write_tensor(&dir.join(name("links.uadt")), &Tensor::f64(&[h, w], l.data.iter().map(|&x| x as f64).collect())?)?;
                    Some(name("links.uadt"))
                }
                None => None,
            };
            entries.push(ViewEntry {
                rgb: name("rgb.png"),
                depth: name("depth.uadt"),
                mask: name("mask.uadt"),
                links,
                features: Some(name("feat.uadt")),
                intrinsics: std::array::from_fn(|r| std::array::from_fn(|c| v.intrinsics.k[(r, c)])),
                extrinsics: std::array::from_fn(|r| std::array::from_fn(|c| v.extrinsics[(r, c)])),
                score: Some(self.scores[i]),
                allow_skew: false,
                part_labels: Some(name("parts.uadt")),
            });
        }
        let mut link_ids: Vec<u32> = self.spec.parts.iter().map(|p| p.link_id).collect();
        link_ids.sort_unstable();
        link_ids.dedup();
        let manifest = SceneManifest {
            object_id: self.spec.object_id.clone(),
            category: self.spec.category.clone(),
            views: entries,
            links: if link_ids.len() > 1 {
                link_ids.iter().map(|&id| LinkEntry { id, name: format!("link{id}") }).collect()
            } else {
                vec![]
            },
            feature_dim: Some(d),
            embeddings: None,
            parts: self
                .spec
                .parts
                .iter()
                .enumerate()
                .map(|(i, p)| PartEntry {
                    index: i as u32 + 1,
                    name: p.name.clone(),
                    link_id: p.link_id,
                    instruction: p.instruction.clone(),
                })
                .collect(),
        };
        manifest.save(&dir.join("scene.json"))?;
        self.mock_fixture().save(&dir.join("vlm_fixture.json"))?;
        crate::io::tensor::write_atomic(&dir.join("synth_spec.json"), serde_json::to_string_pretty(&self.spec)?.as_bytes())?;
        Ok(manifest)
    }
}

/// Renders `spec` and writes it under `dir`.
pub fn generate_scene(spec: &SynthSpec, dir: &Path) -> Result<SceneManifest> {
    render_scene(spec)?.write(dir)
}

/// Uniformly random colour, for parts built programmatically.
pub fn random_color(rng: &mut impl Rng) -> [u8; 3] {
    [rng.gen_range(40..=255), rng.gen_range(40..=255), rng.gen_range(40..=255)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{fuse_features, DEFAULT_VISIBILITY_TOLERANCE};
    use crate::geom::{aggregate_scene, backproject_view};

    #[test]
    fn unit_box_frontal_render() {
        let s = render_scene(&unit_box_frontal()).unwrap();
        let v = &s.views[0];
        // camera on +x axis at distance 3 looking at the origin: front face at x = 0.5
        let fg = v.fg_mask.data.iter().filter(|&&m| m).count();
        assert!(fg > 0);
        for row in 0..v.height() {
            for col in 0..v.width() {
                if *v.fg_mask.get(row, col) {
                    assert!((v.depth.get(row, col) - 2.5).abs() < 1e-12);
                }
                // silhouette: |y|,|z| ≤ 0.5 on the front-face plane
                let p = v.intrinsics.unproject(col as f64, row as f64, 2.5);
                let inside = p.x.abs() <= 0.5 && p.y.abs() <= 0.5;
                assert_eq!(*v.fg_mask.get(row, col), inside, "({row},{col})");
            }
        }
    }

    #[test]
    fn backprojection_on_surfaces() {
        let s = render_scene(&mug(3)).unwrap();
        for (vi, v) in s.views.iter().enumerate() {
            let c = backproject_view(v);
            for (n, p) in c.points.iter().enumerate() {
                let part = &s.spec.parts[s.part_maps[vi].data[c.source_pixel[n] as usize] as usize - 1];
                let d = part.primitives.iter().map(|pr| pr.surface_distance(p)).fold(f64::INFINITY, f64::min);
                assert!(d < 1e-6, "view {vi} point {n} off surface by {d}");
            }
        }
    }

    #[test]
    fn deterministic() {
        let a = render_scene(&mug(1)).unwrap();
        let b = render_scene(&mug(1)).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.part_maps, b.part_maps);
        let c = render_scene(&mug(2)).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn noiseless_two_parts_fuse_to_two_rows() {
        let s = render_scene(&two_part_slab(0.0, 4)).unwrap();
        let cloud = aggregate_scene(&s.views).unwrap();
        let f = fuse_features(&cloud, &s.views, &s.features, DEFAULT_VISIBILITY_TOLERANCE).unwrap();
        let truth = s.point_parts(&cloud);
        // every fused row equals its own part's signature unless visibility mixed in the other part
        let mut pure = 0;
        for n in 0..cloud.len() {
            let sig = &s.signatures[truth[n] as usize - 1];
            let row = f.row(n);
            if row.iter().zip(sig).all(|(a, b)| (a - b).abs() < 1e-6) {
                pure += 1;
            }
        }
        assert!(pure as f64 > 0.95 * cloud.len() as f64, "{pure} of {}", cloud.len());
    }

    #[test]
    fn signatures_respect_margin() {
        let s = render_scene(&cabinet(0)).unwrap();
        for i in 0..s.signatures.len() {
            for j in 0..i {
                assert!(angle_deg(&s.signatures[i], &s.signatures[j]) >= 60.0);
            }
        }
    }
}
