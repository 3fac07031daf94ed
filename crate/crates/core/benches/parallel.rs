//! Rayon vs the sequential fallback on the hot loops. Each group runs the
//! same call twice: once as is, once inside `par::sequential`.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use uad_core::decoder::{feature_matrix, train, TrainConfig, TrainSample};
use uad_core::fusion::{fuse_features, DEFAULT_VISIBILITY_TOLERANCE};
use uad_core::geom::{aggregate_scene, downsample, Grid};
use uad_core::metrics::{evaluate_set, EvalConfig, EvalRecord};
use uad_core::regions::{propose_regions, RegionConfig};
use uad_core::{par, seed, synth};

fn both<F: Fn()>(c: &mut Criterion, group: &str, f: F) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("mode", "parallel"), |b| b.iter(&f));
    g.bench_function(BenchmarkId::new("mode", "sequential"), |b| b.iter(|| par::sequential(&f)));
    g.finish();
}

fn benches(c: &mut Criterion) {
    let scene = synth::render_scene(&synth::mug(3)).unwrap();
    let cloud = downsample(&aggregate_scene(&scene.views).unwrap(), 8192);
    let field = fuse_features(&cloud, &scene.views, &scene.features, DEFAULT_VISIBILITY_TOLERANCE).unwrap();

    both(c, "fusion", || {
        fuse_features(&cloud, &scene.views, &scene.features, DEFAULT_VISIBILITY_TOLERANCE).unwrap();
    });

    let cfg = RegionConfig::default();
    both(c, "regions", || {
        propose_regions(&field, &cloud, &cfg).unwrap();
    });

    let mut rng = seed::rng(1, "bench");
    let records: Vec<EvalRecord> = (0..64)
        .map(|i| EvalRecord {
            id: format!("r{i}"),
            prediction: Grid::from_vec(64, 64, (0..4096).map(|_| rng.gen()).collect()).unwrap(),
            ground_truth: Grid::from_vec(64, 64, (0..4096).map(|_| if rng.gen_bool(0.2) { 1.0 } else { 0.0 }).collect()).unwrap(),
            instruction: None,
            action_object: None,
        })
        .collect();
    let eval = EvalConfig::default();
    both(c, "metrics", || {
        evaluate_set(&records, &eval);
    });

    // one epoch of one batch: the per-item gradients are the parallel part
    let samples: Vec<TrainSample> = scene.features[..8]
        .iter()
        .enumerate()
        .map(|(i, f)| TrainSample {
            id: format!("s{i}"),
            features: Arc::new(feature_matrix(f)),
            embedding: (0..32).map(|_| rng.gen_range(-0.2..0.2)).collect(),
            target: (0..f.width * f.height).map(|_| rng.gen()).collect(),
        })
        .collect();
    let tc = TrainConfig { epochs: 1, ..TrainConfig::default() };
    both(c, "decoder_batch", || {
        train(&samples, &tc, &mut |_, _| {}).unwrap();
    });
}

criterion_group!(parallel, benches);
criterion_main!(parallel);
