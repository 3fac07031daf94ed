//! From region labels to affordance triplets: ask a VLM which region serves
//! which task, score every point by cosine similarity to the region's mean
//! feature, and project those scores into each view.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::fusion::FeatureField;
use crate::geom::{label_pixels_by_nn, nn_index_map, CameraView, Grid, PointCloud, SpatialIndex};
use crate::io::png::encode_rgb_png;
use crate::regions::{render_region_overlay, RegionLabeling};
use crate::{par, Error, Result};

pub mod dataset;
pub mod embed;
pub mod vlm;

pub use dataset::{DatasetEntry, DatasetManifest, DatasetWriter};
pub use embed::{stub_embedding, EmbeddingSource, EmbeddingStore, StubEmbedder, DEFAULT_EMBEDDING_DIM};
pub use vlm::{HttpVlmClient, MockFixture, MockVlmClient, MockVlmServer, VlmClient, VlmRequest, VlmResponse};

/// Values strictly below this are zeroed before blurring.
pub const MAP_THRESHOLD: f64 = 0.5;
pub const BLUR_SIGMA: f64 = 0.8;
/// Reference features with a smaller norm cannot define a direction.
pub const MIN_REFERENCE_NORM: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskProposal {
    pub instruction: String,
    pub region_label: u32,
    pub object_category: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffordanceTriplet {
    pub object_id: String,
    /// Index of the view within its scene.
    pub view: usize,
    pub instruction: String,
    pub region: u32,
    pub embedding: Vec<f32>,
    pub map: Grid<f64>,
    /// No pixel of this view sees the region.
    pub occluded: bool,
}

/// Highest score wins; ties go to the lowest index.
pub fn select_canonical_view(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::invalid("no views to choose from"));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    #[serde(with = "millis")]
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, base_delay: Duration::from_millis(250) }
    }
}

mod millis {
    use std::time::Duration;

    pub fn serialize<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(serde::Deserialize::deserialize(d)?))
    }
}

/// Queries the VLM and keeps proposals that name a region from the request
/// with a non-empty instruction. An instruction proposed twice keeps its
/// first region.
pub fn propose_tasks(client: &dyn VlmClient, request: &VlmRequest, retry: &RetryPolicy) -> Result<Vec<TaskProposal>> {
    let attempts = retry.attempts.max(1);
    let mut delay = retry.base_delay;
    let mut attempt = 0;
    let response = loop {
        attempt += 1;
        match client.propose(request) {
            Ok(r) => break r,
            Err(e) if e.retriable && attempt < attempts => {
                log::warn!("vlm request for {} failed (attempt {attempt}/{attempts}): {e}", request.category);
                std::thread::sleep(delay);
                delay *= 2;
            }
            Err(e) => return Err(Error::Vlm { attempts: attempt, message: e.message }),
        }
    };
    let mut out: Vec<TaskProposal> = Vec::new();
    for p in response.proposals {
        let instruction = p.instruction.trim();
        if instruction.is_empty() {
            log::warn!("dropping proposal with empty instruction");
        } else if !request.region_ids.contains(&p.region_id) {
            log::warn!("dropping proposal {instruction:?}: region {} not in request", p.region_id);
        } else if out.iter().any(|o| o.instruction == instruction) {
            log::warn!("dropping duplicate proposal {instruction:?}");
        } else {
            out.push(TaskProposal {
                instruction: instruction.to_string(),
                region_label: p.region_id,
                object_category: request.category.clone(),
            });
        }
    }
    if out.is_empty() {
        log::warn!("no usable proposals for {}", request.category);
    }
    Ok(out)
}

/// Builds the wire request for the canonical view: original RGB plus the
/// region overlay, listing every region id and its overlay colour.
pub fn build_request(
    category: &str,
    labeling: &RegionLabeling,
    view: &CameraView,
    cloud: &PointCloud,
    index: &SpatialIndex,
    prompt: Option<&str>,
) -> Result<VlmRequest> {
    let overlay = render_region_overlay(labeling, view, cloud, index)?;
    let ids: Vec<u32> = (1..=labeling.num_regions).collect();
    let mut req = VlmRequest::new(category, &encode_rgb_png(&view.rgb)?, &encode_rgb_png(&overlay.image)?, ids.clone());
    req.prompt = prompt.map(|p| vlm::render_prompt(p, category, &ids));
    req.legend = overlay.legend.iter().map(|e| vlm::RegionColor { region_id: e.label, rgb: e.rgb }).collect();
    Ok(req)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFeature {
    pub vector: Vec<f64>,
    pub norm: f64,
}

impl ReferenceFeature {
    pub fn is_near_zero(&self) -> bool {
        self.norm <= MIN_REFERENCE_NORM
    }
}

/// Mean fused feature over a region's members.
pub fn reference_feature(field: &FeatureField, labeling: &RegionLabeling, region: u32) -> Result<ReferenceFeature> {
    if labeling.labels.len() != field.len() {
        return Err(Error::shape("labeling and field sizes differ"));
    }
    let mut sum = vec![0.0; field.dim];
    let mut n = 0usize;
    for (i, &l) in labeling.labels.iter().enumerate() {
        if l == region && region != 0 {
            for (s, v) in sum.iter_mut().zip(field.row(i)) {
                *s += v;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyRegion(region));
    }
    sum.iter_mut().for_each(|s| *s /= n as f64);
    let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(ReferenceFeature { vector: sum, norm })
}

/// Cosine similarity of every point to `f_ref`, negatives clipped to 0.
/// Unseen points and zero-feature points score 0.
pub fn similarity_scores(field: &FeatureField, f_ref: &[f64]) -> Result<Vec<f64>> {
    if f_ref.len() != field.dim {
        return Err(Error::shape(format!("reference has {} dims, field has {}", f_ref.len(), field.dim)));
    }
    let rn = f_ref.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(rn > MIN_REFERENCE_NORM) {
        return Err(Error::invalid(format!("reference feature norm {rn:e} is too small")));
    }
    Ok(par::map_range(field.len(), |i| {
        if !field.is_valid(i) {
            return 0.0;
        }
        let row = field.row(i);
        let (mut dot, mut nn) = (0.0, 0.0);
        for (a, b) in row.iter().zip(f_ref) {
            dot += a * b;
            nn += a * a;
        }
        if nn == 0.0 {
            0.0
        } else {
            (dot / (nn.sqrt() * rn)).clamp(0.0, 1.0)
        }
    }))
}

/// Per-pixel score of the nearest cloud point; background pixels are 0.
pub fn build_affordance_map(scores: &[f64], view: &CameraView, cloud: &PointCloud, index: &SpatialIndex) -> Result<Grid<f64>> {
    label_pixels_by_nn(view, cloud, scores, index)
}

/// Normalised 3×3 Gaussian weights, row-major.
pub fn blur_kernel(sigma: f64) -> [[f64; 3]; 3] {
    let g = [(-1.0 / (2.0 * sigma * sigma)).exp(), 1.0, (-1.0 / (2.0 * sigma * sigma)).exp()];
    let total: f64 = g.iter().sum::<f64>().powi(2);
    std::array::from_fn(|r| std::array::from_fn(|c| g[r] * g[c] / total))
}

/// Threshold at [`MAP_THRESHOLD`], blur with a zero-padded 3×3 Gaussian, clamp to [0, 1].
pub fn postprocess_map(map: &Grid<f64>) -> Grid<f64> {
    let k = blur_kernel(BLUR_SIGMA);
    let t = map.map(|&v| if v < MAP_THRESHOLD { 0.0 } else { v });
    let (h, w) = (map.height as i64, map.width as i64);
    let mut out = Grid::filled(map.width, map.height, 0.0);
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (dr, krow) in k.iter().enumerate() {
                for (dc, kv) in krow.iter().enumerate() {
                    let (rr, cc) = (r + dr as i64 - 1, c + dc as i64 - 1);
                    if rr >= 0 && cc >= 0 && rr < h && cc < w {
                        acc += kv * t.get(rr as usize, cc as usize);
                    }
                }
            }
            out.set(r as usize, c as usize, acc.clamp(0.0, 1.0));
        }
    }
    out
}

/// Everything [`generate_dataset`] needs about one object.
pub struct ObjectInput<'a> {
    pub object_id: &'a str,
    pub category: &'a str,
    pub views: &'a [CameraView],
    /// Per-view category similarity; `None` uses view 0 as canonical.
    pub scores: Option<&'a [f64]>,
    pub cloud: &'a PointCloud,
    pub field: &'a FeatureField,
    pub labeling: &'a RegionLabeling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotateConfig {
    pub retry: RetryPolicy,
    /// Prompt template; `None` sends the built-in one.
    pub prompt: Option<String>,
    /// Apply threshold + blur to the projected maps.
    pub postprocess: bool,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        AnnotateConfig { retry: RetryPolicy::default(), prompt: None, postprocess: true }
    }
}

/// Output of annotating one object: its proposals and triplets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjectAnnotation {
    pub proposals: Vec<TaskProposal>,
    pub triplets: Vec<AffordanceTriplet>,
}

/// Annotates a single object. VLM failures after all retries and missing
/// embeddings skip work (logged) rather than failing the run.
pub fn annotate_object(
    input: &ObjectInput<'_>,
    client: &dyn VlmClient,
    store: &dyn EmbeddingSource,
    config: &AnnotateConfig,
) -> Result<ObjectAnnotation> {
    if input.views.is_empty() {
        return Err(Error::invalid(format!("{}: no views", input.object_id)));
    }
    if input.field.len() != input.cloud.len() || input.labeling.labels.len() != input.cloud.len() {
        return Err(Error::shape(format!("{}: cloud, field and labeling sizes differ", input.object_id)));
    }
    let canonical = match input.scores {
        Some(s) if s.len() == input.views.len() => select_canonical_view(s)?,
        Some(s) => return Err(Error::shape(format!("{} scores for {} views", s.len(), input.views.len()))),
        None => 0,
    };
    let index = SpatialIndex::new(&input.cloud.points);
    let prompt = config.prompt.as_deref().unwrap_or(vlm::DEFAULT_PROMPT);
    let request = build_request(input.category, input.labeling, &input.views[canonical], input.cloud, &index, Some(prompt))?;
    let proposals = match propose_tasks(client, &request, &config.retry) {
        Ok(p) => p,
        Err(e @ Error::Vlm { .. }) => {
            log::warn!("skipping {}: {e}", input.object_id);
            return Ok(ObjectAnnotation::default());
        }
        Err(e) => return Err(e),
    };

    // pixel → nearest point, shared by every proposal
    let nn_maps: Vec<Grid<Option<u32>>> = input.views.iter().map(|v| nn_index_map(v, &index)).collect::<Result<_>>()?;
    let mut triplets = Vec::new();
    for p in &proposals {
        let Some(embedding) = store.embed(&p.instruction) else {
            log::warn!("{}: no embedding for {:?}; skipped", input.object_id, p.instruction);
            continue;
        };
        let f_ref = reference_feature(input.field, input.labeling, p.region_label)?;
        if f_ref.is_near_zero() {
            log::warn!("{}: region {} has a near-zero mean feature; skipped", input.object_id, p.region_label);
            continue;
        }
        let scores = similarity_scores(input.field, &f_ref.vector)?;
        let maps = par::map_range(input.views.len(), |vi| {
            let nn = &nn_maps[vi];
            let raw = nn.map(|i| i.map_or(0.0, |i| scores[i as usize]));
            let occluded = !nn.data.iter().any(|i| i.is_some_and(|i| input.labeling.labels[i as usize] == p.region_label));
            (if config.postprocess { postprocess_map(&raw) } else { raw }, occluded)
        });
        for (vi, (map, occluded)) in maps.into_iter().enumerate() {
            triplets.push(AffordanceTriplet {
                object_id: input.object_id.to_string(),
                view: vi,
                instruction: p.instruction.clone(),
                region: p.region_label,
                embedding: embedding.clone(),
                map,
                occluded,
            });
        }
    }
    Ok(ObjectAnnotation { proposals, triplets })
}

/// Annotates objects concurrently; triplets come back in object order, then
/// proposal order, then view order.
pub fn generate_dataset(
    objects: &[ObjectInput<'_>],
    client: &dyn VlmClient,
    store: &dyn EmbeddingSource,
    config: &AnnotateConfig,
) -> Result<Vec<AffordanceTriplet>> {
    let per_object = par::map_slice(objects, |o| annotate_object(o, client, store, config));
    let mut out = Vec::new();
    for r in per_object {
        out.extend(r?.triplets);
    }
    Ok(out)
}
