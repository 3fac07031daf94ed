//! `uad`: command-line driver for the affordance annotation and distillation
//! pipeline. Progress and errors go to stderr as one JSON object per line;
//! each command prints a JSON summary on stdout when it succeeds.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use uad_core::annotate::{EmbeddingSource, EmbeddingStore, HttpVlmClient, MockFixture, MockVlmClient, StubEmbedder, VlmClient};
use uad_core::decoder::FilmDecoder;
use uad_core::geom::FeatureMap;
use uad_core::io::obs::WorkspaceBounds;
use uad_core::io::read_tensor;
use uad_core::pipeline::{self, PipelineConfig, StagedObject};
use uad_core::synth;

mod logger;

#[derive(Parser, Debug)]
#[command(name = "uad", version, about = "Unsupervised affordance annotation and distillation")]
struct Cli {
    /// Root seed; module seeds are derived from it. Overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// JSON pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, env = "UAD_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render synthetic scenes with analytic ground truth and a mock-VLM fixture.
    Synth(SynthArgs),
    /// Fuse per-view features into a per-point feature field.
    Fuse(FuseArgs),
    /// Propose candidate regions and render the labelled overlay.
    Cluster(ClusterArgs),
    /// Ask the VLM for tasks and write the affordance triplet dataset.
    Annotate(AnnotateArgs),
    /// Train the FiLM decoder on a triplet dataset.
    Distill(DistillArgs),
    /// Predict affordance maps from image features and an instruction.
    Predict(PredictArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Pack per-view observation stacks for a policy.
    PackObs(PackObsArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Fixture name (mug, cabinet, bottle, hammer, kettle, pan, slab); repeatable.
    /// Defaults to the five-object corpus.
    #[arg(long = "object")]
    objects: Vec<String>,
}

#[derive(Args, Debug)]
struct FuseArgs {
    #[arg(long)]
    scene: PathBuf,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    /// Fused field; defaults to `<out-dir>/fused.uadb`.
    #[arg(long)]
    fused: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnnotateArgs {
    /// `cluster` output directory (or its regions.json); repeatable.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,

    /// VLM server base URL.
    #[arg(long, env = "UAD_VLM_ENDPOINT", conflicts_with = "mock_fixture")]
    vlm_endpoint: Option<String>,

    /// Answer from fixture files instead of a server; repeatable.
    #[arg(long)]
    mock_fixture: Vec<PathBuf>,

    /// Instruction embedding store; stub embeddings are used when absent.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DistillArgs {
    /// Dataset directory or its dataset.json.
    #[arg(long)]
    dataset: PathBuf,

    #[arg(long)]
    epochs: Option<usize>,

    #[arg(long)]
    batch: Option<usize>,

    #[arg(long)]
    lr: Option<f64>,

    /// View indices excluded from training, comma separated.
    #[arg(long, value_delimiter = ',')]
    holdout_views: Vec<usize>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    decoder: PathBuf,

    /// Predict every (scene, view, instruction) of this dataset.
    #[arg(long, conflicts_with_all = ["features", "instruction"])]
    dataset: Option<PathBuf>,

    /// Restrict `--dataset` predictions to these views, comma separated.
    #[arg(long, value_delimiter = ',', requires = "dataset")]
    views: Vec<usize>,

    /// H×W×d feature tensor.
    #[arg(long, requires = "instruction")]
    features: Option<PathBuf>,

    #[arg(long, requires = "features")]
    instruction: Option<String>,

    /// Embedding store for `--instruction`; stub embeddings when absent.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// predictions.json written by `predict`.
    #[arg(long, conflicts_with_all = ["prediction", "ground_truth"])]
    predictions: Option<PathBuf>,

    /// Prediction tensor; pairs with `--ground-truth` in order. Repeatable.
    #[arg(long)]
    prediction: Vec<PathBuf>,

    #[arg(long)]
    ground_truth: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct PackObsArgs {
    #[arg(long)]
    scene: PathBuf,

    /// One affordance map per view, in view order; all-zero maps when absent.
    #[arg(long = "map")]
    maps: Vec<PathBuf>,

    /// Workspace box `xmin,ymin,zmin,xmax,ymax,zmax`.
    #[arg(long, value_parser = parse_bounds, allow_hyphen_values = true)]
    bounds: WorkspaceBounds,

    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    proprio: Vec<f64>,

    /// Random-crop fraction in (0, 1].
    #[arg(long)]
    crop: Option<f64>,
}

fn parse_bounds(s: &str) -> Result<WorkspaceBounds, String> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"))).collect::<Result<_, _>>()?;
    if v.len() != 6 {
        return Err(format!("expected 6 comma-separated numbers, got {}", v.len()));
    }
    WorkspaceBounds::new([v[0], v[1], v[2]], [v[3], v[4], v[5]]).map_err(|e| e.to_string())
}

fn emit(v: Value) {
    logger::line(&v);
}

type CliResult = Result<Value, uad_core::Error>;

fn load_config(cli: &Cli) -> Result<PipelineConfig, uad_core::Error> {
    let mut c = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    Ok(c)
}

fn embeddings(path: Option<&Path>, config: &PipelineConfig) -> Result<Box<dyn EmbeddingSource>, uad_core::Error> {
    Ok(match path {
        Some(p) => Box::new(EmbeddingStore::load(p)?),
        None => Box::new(StubEmbedder { dim: config.annotate.embedding_dim, seed: config.embedding_seed() }),
    })
}

fn synth_specs(names: &[String], seed: u64) -> Result<Vec<synth::SynthSpec>, uad_core::Error> {
    if names.is_empty() {
        return Ok(synth::corpus(seed));
    }
    names
        .iter()
        .map(|n| {
            Ok(match n.as_str() {
                "mug" => synth::mug(seed),
                "cabinet" => synth::cabinet(seed),
                "bottle" => synth::bottle(seed),
                "hammer" => synth::hammer(seed),
                "kettle" => synth::kettle(seed),
                "pan" => synth::pan(seed),
                "slab" => {
                    let mut s = synth::two_part_slab(0.05, 14);
                    s.seed = seed;
                    s
                }
                other => return Err(uad_core::Error::Invalid(format!("unknown fixture {other:?}"))),
            })
        })
        .collect()
}

fn read_features(path: &Path) -> Result<FeatureMap, uad_core::Error> {
    let t = read_tensor(path)?;
    match t.shape()[..] {
        [h, w, d] => FeatureMap::from_vec(w, h, d, t.to_f32()),
        _ => Err(uad_core::Error::Shape(format!("{}: features must be H×W×d, got {:?}", path.display(), t.shape()))),
    }
}

fn run(cli: &Cli) -> CliResult {
    let config = load_config(cli)?;
    let out = cli.out_dir.as_path();
    let progress: pipeline::Progress = &emit;
    match &cli.command {
        Command::Synth(a) => {
            let mut written = Vec::new();
            for spec in synth_specs(&a.objects, config.seed)? {
                let dir = out.join(&spec.object_id);
                synth::generate_scene(&spec, &dir)?;
                emit(json!({ "stage": "synth", "event": "scene", "object": spec.object_id }));
                written.push(dir.join("scene.json"));
            }
            Ok(json!({ "scenes": written }))
        }
        Command::Fuse(a) => {
            let f = pipeline::run_fuse(&a.scene, out, &config, progress)?;
            Ok(json!({ "fused": out.join(pipeline::FUSED_FILE), "points": f.cloud.len(), "dim": f.field.dim }))
        }
        Command::Cluster(a) => {
            let fused = a.fused.clone().unwrap_or_else(|| out.join(pipeline::FUSED_FILE));
            let r = pipeline::run_cluster(&fused, out, &config, progress)?;
            Ok(json!({ "regions": out.join(pipeline::REGIONS_FILE), "num_regions": r.labeling.num_regions }))
        }
        Command::Annotate(a) => {
            let client: Box<dyn VlmClient> = match (&a.vlm_endpoint, a.mock_fixture.is_empty()) {
                (_, false) => {
                    let mut fx = MockFixture::default();
                    for p in &a.mock_fixture {
                        fx.merge(MockFixture::load(p)?);
                    }
                    Box::new(MockVlmClient::new(fx))
                }
                (Some(url), true) => Box::new(HttpVlmClient::new(url, config.annotate.max_in_flight, config.annotate.timeout())),
                (None, true) => return Err(uad_core::Error::Invalid("annotate needs --vlm-endpoint or --mock-fixture".into())),
            };
            let objects = a.inputs.iter().map(|p| StagedObject::load(p)).collect::<Result<Vec<_>, _>>()?;
            let store = embeddings(a.embeddings.as_deref(), &config)?;
            let m = pipeline::run_annotate(&objects, client.as_ref(), store.as_ref(), out, &config, progress)?;
            Ok(json!({ "dataset": out.join(uad_core::annotate::dataset::MANIFEST_NAME), "triplets": m.entries.len() }))
        }
        Command::Distill(a) => {
            let mut config = config;
            if let Some(e) = a.epochs {
                config.train.epochs = e;
            }
            if let Some(b) = a.batch {
                config.train.batch_size = b;
            }
            if let Some(lr) = a.lr {
                config.train.lr = lr;
            }
            let holdout: BTreeSet<usize> = a.holdout_views.iter().copied().collect();
            let (_, log) = pipeline::run_distill(&a.dataset, &holdout, out, &config, progress)?;
            Ok(json!({ "decoder": out.join(pipeline::DECODER_FILE), "config": log.config, "epoch_losses": log.epoch_losses }))
        }
        Command::Predict(a) => {
            let decoder = FilmDecoder::load(&a.decoder)?;
            let m = match (&a.dataset, &a.features, &a.instruction) {
                (Some(ds), _, _) => {
                    let views: BTreeSet<usize> = a.views.iter().copied().collect();
                    pipeline::run_predict_dataset(&decoder, ds, (!views.is_empty()).then_some(&views), out, progress)?
                }
                (None, Some(f), Some(instr)) => {
                    let store = embeddings(a.embeddings.as_deref(), &config)?;
                    pipeline::run_predict_single(&decoder, &read_features(f)?, instr, store.as_ref(), out)?
                }
                _ => return Err(uad_core::Error::Invalid("predict needs --dataset, or --features with --instruction".into())),
            };
            Ok(json!({ "predictions": out.join(pipeline::PREDICTIONS_FILE), "count": m.entries.len() }))
        }
        Command::Eval(a) => {
            let report = match &a.predictions {
                Some(p) => pipeline::run_eval(p, out, &config, progress)?,
                None => {
                    if a.prediction.is_empty() || a.prediction.len() != a.ground_truth.len() {
                        return Err(uad_core::Error::Invalid(
                            "eval needs --predictions, or matching --prediction/--ground-truth pairs".into(),
                        ));
                    }
                    let pairs: Vec<_> = a.prediction.iter().cloned().zip(a.ground_truth.iter().cloned()).collect();
                    pipeline::run_eval_pairs(&pairs, out, &config, progress)?
                }
            };
            Ok(json!({ "report": out.join(pipeline::REPORT_JSON), "means": report.means }))
        }
        Command::PackObs(a) => {
            let pack = pipeline::run_pack_obs(&a.scene, &a.maps, a.bounds, &a.proprio, a.crop, out, &config, progress)?;
            Ok(json!({ "obs": out.join(pipeline::OBS_FILE), "views": pack.views.len() }))
        }
    }
}

fn stage_name(c: &Command) -> &'static str {
    match c {
        Command::Synth(_) => "synth",
        Command::Fuse(_) => "fuse",
        Command::Cluster(_) => "cluster",
        Command::Annotate(_) => "annotate",
        Command::Distill(_) => "distill",
        Command::Predict(_) => "predict",
        Command::Eval(_) => "eval",
        Command::PackObs(_) => "pack-obs",
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors and 0 for --help/--version
    let cli = Cli::parse();
    logger::init();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            emit(json!({ "event": "error", "stage": stage_name(&cli.command), "message": e.to_string() }));
            ExitCode::from(1)
        }
    }
}
