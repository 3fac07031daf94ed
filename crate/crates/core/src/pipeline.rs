//! File-level stages: each reads the artifacts of the previous one from disk
//! and writes its own. The `uad` binary is a thin shell over these.
//!
//! ```text
//! scene.json ─fuse→ fused.uadb ─cluster→ regions.json ─annotate→ dataset.json
//!   ─distill→ decoder.uadb ─predict→ predictions.json ─eval→ report.{json,csv}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::annotate::{
    generate_dataset, AnnotateConfig, DatasetManifest, DatasetWriter, EmbeddingSource, ObjectInput, RetryPolicy, VlmClient,
    DEFAULT_EMBEDDING_DIM,
};
use crate::decoder::{feature_matrix, predict, train, FilmDecoder, TrainConfig, TrainLog, TrainSample};
use crate::fusion::{fuse_features, FeatureField, DEFAULT_VISIBILITY_TOLERANCE};
use crate::geom::{aggregate_scene, downsample, FeatureMap, Grid, Point3, PointCloud, SpatialIndex, DEFAULT_TARGET_POINTS};
use crate::io::obs::{pack_observation, random_crop_augment, ObservationPack, WorkspaceBounds};
use crate::io::png::{write_heatmap_png, write_rgb_png};
use crate::io::tensor::{read_tensor, write_atomic, write_tensor};
use crate::io::{Bundle, Scene, Tensor};
use crate::metrics::{evaluate_set, EvalConfig, EvalRecord, EvalReport};
use crate::regions::{propose_regions, render_region_overlay, LegendEntry, RegionConfig, RegionLabeling};
use crate::{seed, Error, Result};

pub const FUSED_FILE: &str = "fused.uadb";
pub const REGIONS_FILE: &str = "regions.json";
pub const OVERLAY_FILE: &str = "overlay.png";
pub const DECODER_FILE: &str = "decoder.uadb";
pub const TRAIN_LOG_FILE: &str = "train_log.json";
pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const OBS_FILE: &str = "obs.uadb";

/// Progress sink; receives one JSON object per event.
pub type Progress<'a> = &'a (dyn Fn(Value) + Sync);

pub fn silent(_: Value) {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionSettings {
    pub tolerance: f64,
    pub target_points: usize,
}

impl Default for FusionSettings {
    fn default() -> Self {
        FusionSettings { tolerance: DEFAULT_VISIBILITY_TOLERANCE, target_points: DEFAULT_TARGET_POINTS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotateSettings {
    pub retry: RetryPolicy,
    pub prompt: Option<String>,
    pub postprocess: bool,
    /// Used for stub embeddings when no store is given.
    pub embedding_dim: usize,
    pub max_in_flight: usize,
    pub timeout_secs: f64,
}

impl Default for AnnotateSettings {
    fn default() -> Self {
        let base = AnnotateConfig::default();
        AnnotateSettings {
            retry: base.retry,
            prompt: base.prompt,
            postprocess: base.postprocess,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            max_in_flight: 4,
            timeout_secs: 30.0,
        }
    }
}

impl AnnotateSettings {
    pub fn config(&self) -> AnnotateConfig {
        AnnotateConfig { retry: self.retry, prompt: self.prompt.clone(), postprocess: self.postprocess }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.001))
    }
}

/// Whole-pipeline configuration. One root seed; per-module seeds are derived
/// from it, so seeds inside the sections are ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub fusion: FusionSettings,
    pub regions: RegionConfig,
    pub annotate: AnnotateSettings,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::File { path: path.to_path_buf(), source })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn region_config(&self) -> RegionConfig {
        RegionConfig { seed: seed::derive_seed(self.seed, "regions"), ..self.regions.clone() }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: seed::derive_seed(self.seed, "decoder"), ..self.train.clone() }
    }

    pub fn embedding_seed(&self) -> u64 {
        seed::derive_seed(self.seed, "embeddings")
    }

    pub fn crop_seed(&self) -> u64 {
        seed::derive_seed(self.seed, "obs")
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::File { path: dir.to_path_buf(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::File { path: path.to_path_buf(), source })?;
    Ok(serde_json::from_str(&text)?)
}

fn absolute(path: &Path) -> PathBuf {
    std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf())
}

fn grid_tensor(g: &Grid<f64>) -> Result<Tensor> {
    Ok(Tensor::f64(&[g.height, g.width], g.data.clone())?)
}

pub fn read_grid(path: &Path) -> Result<Grid<f64>> {
    let t = read_tensor(path)?;
    match t.shape()[..] {
        [h, w] => Grid::from_vec(w, h, t.to_f64()),
        _ => Err(Error::shape(format!("{}: expected an H×W tensor, got {:?}", path.display(), t.shape()))),
    }
}

// ---------------------------------------------------------------- fuse

/// Downsampled object cloud with its fused feature field.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedObject {
    /// Scene manifest the object came from.
    pub scene: PathBuf,
    pub cloud: PointCloud,
    pub field: FeatureField,
}

impl FusedObject {
    pub fn to_bundle(&self, settings: &FusionSettings) -> Result<Bundle> {
        let n = self.cloud.len();
        let mut b = Bundle::new(json!({
            "kind": "fused",
            "scene": self.scene,
            "points": n,
            "dim": self.field.dim,
            "tolerance": settings.tolerance,
            "target_points": settings.target_points,
        }));
        let pts: Vec<f64> = self.cloud.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        b.push("points", Tensor::f64(&[n, 3], pts)?);
        b.push("source_view", Tensor::f64(&[n], self.cloud.source_view.iter().map(|&v| v as f64).collect())?);
        b.push("source_pixel", Tensor::f64(&[n], self.cloud.source_pixel.iter().map(|&v| v as f64).collect())?);
        b.push("link_id", Tensor::f64(&[n], self.cloud.link_id.iter().map(|l| l.map_or(-1.0, |v| v as f64)).collect())?);
        b.push("features", Tensor::f64(&[n, self.field.dim], self.field.features.clone())?);
        b.push("visible_count", Tensor::f64(&[n], self.field.visible_count.iter().map(|&v| v as f64).collect())?);
        Ok(b)
    }

    pub fn from_bundle(b: &Bundle) -> Result<Self> {
        if b.meta.get("kind").and_then(Value::as_str) != Some("fused") {
            return Err(Error::invalid("bundle is not a fused feature field"));
        }
        let scene = b.meta.get("scene").and_then(Value::as_str).ok_or_else(|| Error::invalid("fused bundle has no scene path"))?;
        let pts = b.get("points")?;
        let n = match pts.shape()[..] {
            [n, 3] => n,
            _ => return Err(Error::shape(format!("points tensor {:?}", pts.shape()))),
        };
        let column = |name: &str| -> Result<Vec<f64>> {
            let t = b.get(name)?;
            if t.shape() != [n] {
                return Err(Error::shape(format!("{name} tensor {:?} for {n} points", t.shape())));
            }
            Ok(t.to_f64())
        };
        let p = pts.to_f64();
        let cloud = PointCloud {
            points: p.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect(),
            source_view: column("source_view")?.iter().map(|&v| v as u32).collect(),
            source_pixel: column("source_pixel")?.iter().map(|&v| v as u32).collect(),
            link_id: column("link_id")?.iter().map(|&v| (v >= 0.0).then_some(v as u32)).collect(),
        };
        let f = b.get("features")?;
        let dim = match f.shape()[..] {
            [rows, d] if rows == n => d,
            _ => return Err(Error::shape(format!("features tensor {:?} for {n} points", f.shape()))),
        };
        let field = FeatureField::new(f.to_f64(), column("visible_count")?.iter().map(|&v| v as u32).collect(), dim)?;
        Ok(FusedObject { scene: PathBuf::from(scene), cloud, field })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bundle(&Bundle::read(path)?)
    }
}

/// Back-projects every view, downsamples and fuses the view features.
pub fn fuse_scene(scene_path: &Path, scene: &Scene, settings: &FusionSettings) -> Result<FusedObject> {
    let raw = aggregate_scene(&scene.views)?;
    let cloud = downsample(&raw, settings.target_points);
    let field = fuse_features(&cloud, &scene.views, scene.features()?, settings.tolerance)?;
    Ok(FusedObject { scene: absolute(scene_path), cloud, field })
}

/// `fuse` stage: writes `fused.uadb` under `out_dir`.
pub fn run_fuse(scene_path: &Path, out_dir: &Path, config: &PipelineConfig, progress: Progress) -> Result<FusedObject> {
    let scene = Scene::load(scene_path)?;
    progress(json!({ "stage": "fuse", "event": "loaded", "object": scene.manifest.object_id, "views": scene.views.len() }));
    let fused = fuse_scene(scene_path, &scene, &config.fusion)?;
    create_dir(out_dir)?;
    fused.to_bundle(&config.fusion)?.write(&out_dir.join(FUSED_FILE))?;
    let valid = fused.field.visible_count.iter().filter(|&&c| c > 0).count();
    progress(json!({ "stage": "fuse", "event": "done", "points": fused.cloud.len(), "visible": valid, "dim": fused.field.dim }));
    Ok(fused)
}

// ---------------------------------------------------------------- cluster

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionsFile {
    /// The fused field these labels index.
    pub fused: PathBuf,
    pub labeling: RegionLabeling,
    pub legend: Vec<LegendEntry>,
    pub overlay_view: usize,
    pub config: RegionConfig,
}

impl RegionsFile {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// `cluster` stage: writes `regions.json` and an overlay of the canonical view.
pub fn run_cluster(fused_path: &Path, out_dir: &Path, config: &PipelineConfig, progress: Progress) -> Result<RegionsFile> {
    let fused = FusedObject::load(fused_path)?;
    let rc = config.region_config();
    let labeling = propose_regions(&fused.field, &fused.cloud, &rc)?;
    progress(json!({ "stage": "cluster", "event": "clustered", "regions": labeling.num_regions, "paths": labeling.paths }));
    let scene = Scene::load(&fused.scene)?;
    let view = match scene.scores() {
        Some(s) => crate::annotate::select_canonical_view(&s)?,
        None => 0,
    };
    let index = SpatialIndex::new(&fused.cloud.points);
    let overlay = render_region_overlay(&labeling, &scene.views[view], &fused.cloud, &index)?;
    create_dir(out_dir)?;
    write_rgb_png(&out_dir.join(OVERLAY_FILE), &overlay.image)?;
    let file = RegionsFile { fused: absolute(fused_path), labeling, legend: overlay.legend, overlay_view: view, config: rc };
    write_json(&out_dir.join(REGIONS_FILE), &file)?;
    progress(json!({ "stage": "cluster", "event": "done", "overlay_view": view }));
    Ok(file)
}

// ---------------------------------------------------------------- annotate

/// One object ready for annotation, loaded from a `cluster` output directory.
pub struct StagedObject {
    pub scene_path: PathBuf,
    pub scene: Scene,
    pub fused: FusedObject,
    pub regions: RegionsFile,
}

impl StagedObject {
    /// Reads `regions.json` from `dir` (or `dir` itself if it is a file), then
    /// the fused field and scene it points at.
    pub fn load(dir: &Path) -> Result<Self> {
        let regions_path = if dir.is_dir() { dir.join(REGIONS_FILE) } else { dir.to_path_buf() };
        let regions = RegionsFile::load(&regions_path)?;
        let fused = FusedObject::load(&regions.fused)?;
        if regions.labeling.labels.len() != fused.cloud.len() {
            return Err(Error::shape(format!(
                "{}: {} labels for {} points",
                regions_path.display(),
                regions.labeling.labels.len(),
                fused.cloud.len()
            )));
        }
        let scene = Scene::load(&fused.scene)?;
        Ok(StagedObject { scene_path: fused.scene.clone(), scene, fused, regions })
    }
}

/// `annotate` stage: writes a triplet dataset under `out_dir`.
pub fn run_annotate(
    objects: &[StagedObject],
    client: &dyn VlmClient,
    embeddings: &dyn EmbeddingSource,
    out_dir: &Path,
    config: &PipelineConfig,
    progress: Progress,
) -> Result<DatasetManifest> {
    let scores: Vec<Option<Vec<f64>>> = objects.iter().map(|o| o.scene.scores()).collect();
    let inputs: Vec<ObjectInput<'_>> = objects
        .iter()
        .zip(&scores)
        .map(|(o, s)| ObjectInput {
            object_id: &o.scene.manifest.object_id,
            category: &o.scene.manifest.category,
            views: &o.scene.views,
            scores: s.as_deref(),
            cloud: &o.fused.cloud,
            field: &o.fused.field,
            labeling: &o.regions.labeling,
        })
        .collect();
    let triplets = generate_dataset(&inputs, client, embeddings, &config.annotate.config())?;
    let scene_of: HashMap<&str, String> =
        objects.iter().map(|o| (o.scene.manifest.object_id.as_str(), o.scene_path.display().to_string())).collect();
    create_dir(out_dir)?;
    let mut writer = DatasetWriter::create(out_dir, embeddings.dim())?;
    for t in &triplets {
        writer.append(t, &scene_of[t.object_id.as_str()])?;
    }
    let manifest = writer.finish()?;
    let per_object: BTreeMap<&str, usize> = triplets.iter().fold(BTreeMap::new(), |mut m, t| {
        *m.entry(t.object_id.as_str()).or_default() += 1;
        m
    });
    progress(json!({ "stage": "annotate", "event": "done", "triplets": manifest.entries.len(), "per_object": per_object }));
    Ok(manifest)
}

// ---------------------------------------------------------------- distill

/// Scenes loaded once and shared by every dataset entry that references them.
#[derive(Default)]
struct SceneCache {
    scenes: HashMap<String, Arc<Scene>>,
    matrices: HashMap<(String, usize), Arc<nalgebra::DMatrix<f64>>>,
}

impl SceneCache {
    fn scene(&mut self, path: &str) -> Result<Arc<Scene>> {
        if let Some(s) = self.scenes.get(path) {
            return Ok(s.clone());
        }
        let s = Arc::new(Scene::load(Path::new(path))?);
        self.scenes.insert(path.to_string(), s.clone());
        Ok(s)
    }

    fn features(&mut self, path: &str, view: usize) -> Result<Arc<nalgebra::DMatrix<f64>>> {
        let key = (path.to_string(), view);
        if let Some(m) = self.matrices.get(&key) {
            return Ok(m.clone());
        }
        let scene = self.scene(path)?;
        let f = scene.features()?.get(view).ok_or_else(|| Error::invalid(format!("{path}: no view {view}")))?;
        let m = Arc::new(feature_matrix(f));
        self.matrices.insert(key, m.clone());
        Ok(m)
    }
}

fn dataset_root(dataset: &Path) -> (PathBuf, PathBuf) {
    if dataset.is_dir() {
        (dataset.join(crate::annotate::dataset::MANIFEST_NAME), dataset.to_path_buf())
    } else {
        (dataset.to_path_buf(), dataset.parent().unwrap_or(Path::new(".")).to_path_buf())
    }
}

/// Training samples for every dataset entry whose view is not held out.
pub fn load_training_samples(dataset: &Path, holdout_views: &BTreeSet<usize>) -> Result<Vec<TrainSample>> {
    let (manifest_path, root) = dataset_root(dataset);
    let manifest = DatasetManifest::load(&manifest_path)?;
    let store = manifest.load_embeddings(&root)?;
    let mut cache = SceneCache::default();
    let mut samples = Vec::new();
    for e in manifest.entries.iter().filter(|e| !holdout_views.contains(&e.view)) {
        let features = cache.features(&e.scene, e.view)?;
        let map = manifest.load_map(&root, e)?;
        if map.len() != features.ncols() {
            return Err(Error::shape(format!("{}: map has {} pixels, features {}", e.id, map.len(), features.ncols())));
        }
        let embedding =
            store.get(&e.instruction).ok_or_else(|| Error::invalid(format!("{}: no embedding for {:?}", e.id, e.instruction)))?;
        samples.push(TrainSample {
            id: e.id.clone(),
            features,
            embedding: embedding.iter().map(|&x| x as f64).collect(),
            target: map.data,
        });
    }
    Ok(samples)
}

/// `distill` stage: trains the decoder, writes `decoder.uadb`, `train_log.json`
/// and per-epoch checkpoints under `out_dir/checkpoints`.
pub fn run_distill(
    dataset: &Path,
    holdout_views: &BTreeSet<usize>,
    out_dir: &Path,
    config: &PipelineConfig,
    progress: Progress,
) -> Result<(FilmDecoder, TrainLog)> {
    let samples = load_training_samples(dataset, holdout_views)?;
    let mut tc = config.train_config();
    tc.checkpoint_dir = Some(tc.checkpoint_dir.unwrap_or_else(|| out_dir.join("checkpoints")));
    progress(json!({ "stage": "distill", "event": "config", "config": tc, "samples": samples.len(), "holdout_views": holdout_views }));
    create_dir(out_dir)?;
    let (decoder, log) =
        train(&samples, &tc, &mut |epoch, loss| progress(json!({ "stage": "distill", "event": "epoch", "epoch": epoch, "loss": loss })))?;
    let meta = json!({
        "dataset": absolute(dataset),
        "holdout_views": holdout_views,
        "seed": tc.seed,
        "epochs": tc.epochs,
        "final_loss": log.epoch_losses.last(),
    });
    decoder.save(&out_dir.join(DECODER_FILE), meta)?;
    write_json(&out_dir.join(TRAIN_LOG_FILE), &log)?;
    progress(json!({ "stage": "distill", "event": "done", "final_loss": log.epoch_losses.last() }));
    Ok((decoder, log))
}

// ---------------------------------------------------------------- predict

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view: Option<usize>,
    pub instruction: String,
    /// H×W float64 map, relative to the manifest directory.
    pub prediction: String,
    pub heatmap: String,
    /// H×W float64 ground truth, when the scene carries part labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionManifest {
    pub entries: Vec<PredictionEntry>,
}

impl PredictionManifest {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Binary mask of the part whose instruction is `instruction`, if the scene
/// has ground-truth part maps.
pub fn analytic_ground_truth(scene: &Scene, view: usize, instruction: &str) -> Option<Grid<f64>> {
    let part = scene.manifest.parts.iter().find(|p| p.instruction.as_deref() == Some(instruction))?;
    let pm = scene.part_maps.as_ref()?.get(view)?;
    Some(pm.map(|&p| if p as u32 == part.index { 1.0 } else { 0.0 }))
}

fn write_prediction(out_dir: &Path, n: usize, map: &Grid<f64>) -> Result<(String, String)> {
    let (t, p) = (format!("pred/{n:05}.uadt"), format!("pred/{n:05}.png"));
    write_tensor(&out_dir.join(&t), &grid_tensor(map)?)?;
    write_heatmap_png(&out_dir.join(&p), map)?;
    Ok((t, p))
}

/// Predicts one map from a feature tensor file.
pub fn run_predict_single(
    decoder: &FilmDecoder,
    features: &FeatureMap,
    instruction: &str,
    embeddings: &dyn EmbeddingSource,
    out_dir: &Path,
) -> Result<PredictionManifest> {
    let e = embeddings.embed(instruction).ok_or_else(|| Error::invalid(format!("no embedding for {instruction:?}")))?;
    let map = predict(decoder, features, &e.iter().map(|&x| x as f64).collect::<Vec<_>>())?;
    create_dir(&out_dir.join("pred"))?;
    let (prediction, heatmap) = write_prediction(out_dir, 0, &map)?;
    let m = PredictionManifest {
        entries: vec![PredictionEntry {
            id: "0".into(),
            scene: None,
            view: None,
            instruction: instruction.into(),
            prediction,
            heatmap,
            ground_truth: None,
        }],
    };
    write_json(&out_dir.join(PREDICTIONS_FILE), &m)?;
    Ok(m)
}

/// Predicts every distinct (scene, view, instruction) of the dataset whose
/// view is in `views` (all views when `None`), writing analytic ground truth
/// alongside when available.
pub fn run_predict_dataset(
    decoder: &FilmDecoder,
    dataset: &Path,
    views: Option<&BTreeSet<usize>>,
    out_dir: &Path,
    progress: Progress,
) -> Result<PredictionManifest> {
    let (manifest_path, root) = dataset_root(dataset);
    let manifest = DatasetManifest::load(&manifest_path)?;
    let store = manifest.load_embeddings(&root)?;
    let mut seen = BTreeSet::new();
    let jobs: Vec<_> = manifest
        .entries
        .iter()
        .filter(|e| views.is_none_or(|v| v.contains(&e.view)))
        .filter(|e| seen.insert((e.scene.clone(), e.view, e.instruction.clone())))
        .collect();
    create_dir(&out_dir.join("pred"))?;
    create_dir(&out_dir.join("gt"))?;
    let mut cache = SceneCache::default();
    let mut out = PredictionManifest::default();
    for (n, e) in jobs.iter().enumerate() {
        let scene = cache.scene(&e.scene)?;
        let f = scene.features()?.get(e.view).ok_or_else(|| Error::invalid(format!("{}: no view {}", e.scene, e.view)))?;
        let emb: Vec<f64> = store
            .get(&e.instruction)
            .ok_or_else(|| Error::invalid(format!("no embedding for {:?}", e.instruction)))?
            .iter()
            .map(|&x| x as f64)
            .collect();
        let map = predict(decoder, f, &emb)?;
        let (prediction, heatmap) = write_prediction(out_dir, n, &map)?;
        let ground_truth = match analytic_ground_truth(&scene, e.view, &e.instruction) {
            Some(gt) => {
                let g = format!("gt/{n:05}.uadt");
                write_tensor(&out_dir.join(&g), &grid_tensor(&gt)?)?;
                Some(g)
            }
            None => None,
        };
        out.entries.push(PredictionEntry {
            id: format!("{}/{:02}/{}", e.object_id, e.view, e.instruction),
            scene: Some(e.scene.clone()),
            view: Some(e.view),
            instruction: e.instruction.clone(),
            prediction,
            heatmap,
            ground_truth,
        });
    }
    write_json(&out_dir.join(PREDICTIONS_FILE), &out)?;
    progress(json!({ "stage": "predict", "event": "done", "predictions": out.entries.len() }));
    Ok(out)
}

// ---------------------------------------------------------------- eval

/// `eval` stage over a predictions manifest. Entries without ground truth are
/// skipped.
pub fn run_eval(predictions: &Path, out_dir: &Path, config: &PipelineConfig, progress: Progress) -> Result<EvalReport> {
    let root = predictions.parent().unwrap_or(Path::new("."));
    let manifest = PredictionManifest::load(predictions)?;
    let mut records = Vec::new();
    let mut skipped = 0;
    for e in &manifest.entries {
        let Some(gt) = &e.ground_truth else {
            skipped += 1;
            continue;
        };
        records.push(EvalRecord {
            id: e.id.clone(),
            prediction: read_grid(&root.join(&e.prediction))?,
            ground_truth: read_grid(&root.join(gt))?,
            instruction: Some(e.instruction.clone()),
            action_object: None,
        });
    }
    if records.is_empty() {
        return Err(Error::invalid(format!("{}: no prediction has ground truth", predictions.display())));
    }
    write_eval(&records, out_dir, config, progress, skipped)
}

/// `eval` stage on explicit (prediction, ground truth) tensor pairs.
pub fn run_eval_pairs(pairs: &[(PathBuf, PathBuf)], out_dir: &Path, config: &PipelineConfig, progress: Progress) -> Result<EvalReport> {
    let records = pairs
        .iter()
        .map(|(p, g)| {
            Ok(EvalRecord {
                id: p.display().to_string(),
                prediction: read_grid(p)?,
                ground_truth: read_grid(g)?,
                instruction: None,
                action_object: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_eval(&records, out_dir, config, progress, 0)
}

fn write_eval(records: &[EvalRecord], out_dir: &Path, config: &PipelineConfig, progress: Progress, skipped: usize) -> Result<EvalReport> {
    let report = evaluate_set(records, &config.eval);
    create_dir(out_dir)?;
    report.write_json(&out_dir.join(REPORT_JSON))?;
    report.write_csv(&out_dir.join(REPORT_CSV))?;
    progress(json!({ "stage": "eval", "event": "done", "records": records.len(), "skipped": skipped, "means": report.means }));
    Ok(report)
}

// ---------------------------------------------------------------- pack-obs

/// `pack-obs` stage: one observation stack per scene view. Missing maps are
/// zero (packed as −1).
#[allow(clippy::too_many_arguments)]
pub fn run_pack_obs(
    scene_path: &Path,
    maps: &[PathBuf],
    bounds: WorkspaceBounds,
    proprio: &[f64],
    crop: Option<f64>,
    out_dir: &Path,
    config: &PipelineConfig,
    progress: Progress,
) -> Result<ObservationPack> {
    let scene = Scene::load(scene_path)?;
    if !maps.is_empty() && maps.len() != scene.views.len() {
        return Err(Error::shape(format!("{} maps for {} views", maps.len(), scene.views.len())));
    }
    let grids = if maps.is_empty() {
        scene.views.iter().map(|v| Grid::filled(v.width(), v.height(), 0.0)).collect()
    } else {
        maps.iter().map(|p| read_grid(p)).collect::<Result<Vec<_>>>()?
    };
    let mut pack = pack_observation(&scene.views, &grids, bounds, proprio)?;
    if let Some(c) = crop {
        pack = random_crop_augment(&pack, c, config.crop_seed())?;
    }
    create_dir(out_dir)?;
    pack.to_bundle()?.write(&out_dir.join(OBS_FILE))?;
    progress(json!({ "stage": "pack-obs", "event": "done", "views": pack.views.len(), "crop": crop }));
    Ok(pack)
}
