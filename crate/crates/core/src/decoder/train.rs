use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{loss_and_gradients, AdamState, FilmDecoder, FilmInit, LAYER_PLAN};
use crate::io::tensor::write_atomic;
use crate::{par, seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub init: FilmInit,
    pub layer_plan: Vec<usize>,
    /// Per-epoch checkpoints go here when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            lr: 0.001,
            seed: 0,
            init: FilmInit::Identity,
            layer_plan: LAYER_PLAN.to_vec(),
            checkpoint_dir: None,
        }
    }
}

/// One training item. Feature matrices are shared between the triplets of
/// the same view.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: String,
    /// `d × P`, see [`super::feature_matrix`].
    pub features: Arc<DMatrix<f64>>,
    pub embedding: Vec<f64>,
    /// P values in [0, 1], same pixel order as the feature columns.
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub config: TrainConfig,
    pub samples: usize,
    pub batches_per_epoch: usize,
    /// Mean per-item loss of each epoch, measured during that epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Serialize)]
struct NanDump<'a> {
    epoch: usize,
    batch: usize,
    ids: Vec<&'a str>,
    losses: Vec<f64>,
}

/// Minibatch Adam on mean BCE. Batch loss is the mean of per-image pixel
/// means; gradients are summed in item order so results do not depend on
/// the thread count. `on_epoch(epoch, mean_loss)` runs after every epoch.
pub fn train(samples: &[TrainSample], config: &TrainConfig, on_epoch: &mut dyn FnMut(usize, f64)) -> Result<(FilmDecoder, TrainLog)> {
    let first = samples.first().ok_or_else(|| Error::invalid("empty training set"))?;
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let (d, e) = (first.features.nrows(), first.embedding.len());
    for s in samples {
        if s.features.nrows() != d || s.embedding.len() != e || s.target.len() != s.features.ncols() {
            return Err(Error::shape(format!("sample {} does not match d={d}, e={e} or its own pixel count", s.id)));
        }
        if s.target.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::invalid(format!("sample {}: target outside [0, 1]", s.id)));
        }
    }
    let mut decoder = FilmDecoder::with_plan(d, e, &config.layer_plan, config.init, config.seed);
    decoder.validate()?;
    let mut adam = AdamState::new(&decoder, config.lr);
    let mut rng = seed::rng(config.seed, "decoder/shuffle");
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let batches = samples.len().div_ceil(config.batch_size);
    let mut log = TrainLog { config: config.clone(), samples: samples.len(), batches_per_epoch: batches, epoch_losses: Vec::new() };
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|source| Error::File { path: dir.clone(), source })?;
    }

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, batch) in order.chunks(config.batch_size).enumerate() {
            let results = par::map_slice(batch, |&i| {
                let s = &samples[i];
                loss_and_gradients(&decoder, &s.features, &s.embedding, &s.target)
            });
            let mut losses = Vec::with_capacity(batch.len());
            let mut grad = decoder.zeros_like();
            for r in results {
                let (l, g) = r?;
                losses.push(l);
                grad.add_assign(&g);
            }
            let batch_loss = losses.iter().sum::<f64>() / batch.len() as f64;
            if !batch_loss.is_finite() || !grad.all_finite() {
                let dump = NanDump { epoch, batch: bi, ids: batch.iter().map(|&i| samples[i].id.as_str()).collect(), losses };
                let text = serde_json::to_string_pretty(&dump)?;
                log::error!("non-finite loss at epoch {epoch} batch {bi}: {text}");
                if let Some(dir) = &config.checkpoint_dir {
                    write_atomic(&dir.join("nan_batch.json"), text.as_bytes())?;
                    decoder.save(&dir.join("nan_decoder.uadb"), serde_json::json!({ "epoch": epoch, "batch": bi }))?;
                }
                return Err(Error::NonFiniteLoss { epoch, batch: bi, loss: batch_loss });
            }
            grad.scale(1.0 / batch.len() as f64);
            adam.step(&mut decoder, &grad);
            total += losses.iter().sum::<f64>();
        }
        let mean = total / samples.len() as f64;
        log.epoch_losses.push(mean);
        if let Some(dir) = &config.checkpoint_dir {
            let meta = serde_json::json!({ "epoch": epoch + 1, "seed": config.seed, "loss": mean });
            decoder.save(&dir.join(format!("epoch_{:03}.uadb", epoch + 1)), meta)?;
        }
        on_epoch(epoch + 1, mean);
    }
    Ok((decoder, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::forward_matrix;
    use rand::Rng;

    fn sample(id: usize, d: usize, e: &[f64], rng: &mut impl Rng) -> TrainSample {
        let p = 16;
        let x = DMatrix::from_fn(d, p, |_, _| rng.gen_range(-1.0..1.0));
        // target: pixels whose first channel is positive, tied to the embedding sign
        let flip = e[0] < 0.0;
        let target = (0..p).map(|c| if (x[(0, c)] > 0.0) != flip { 1.0 } else { 0.0 }).collect();
        TrainSample { id: id.to_string(), features: Arc::new(x), embedding: e.to_vec(), target }
    }

    #[test]
    fn loss_decreases() {
        let mut rng = seed::rng(1, "train-test");
        let samples: Vec<_> = (0..20).map(|i| sample(i, 6, if i % 2 == 0 { &[1.0, 0.0] } else { &[-1.0, 0.5] }, &mut rng)).collect();
        let cfg = TrainConfig { layer_plan: vec![16, 8, 1], ..TrainConfig::default() };
        let (_, log) = train(&samples, &cfg, &mut |_, _| {}).unwrap();
        assert_eq!(log.epoch_losses.len(), 30);
        assert!(log.epoch_losses[29] < log.epoch_losses[0], "{:?}", log.epoch_losses);
    }

    #[test]
    fn stationary_data_keeps_loss() {
        let mut rng = seed::rng(2, "train-test");
        let cfg = TrainConfig { layer_plan: vec![4, 3, 1], epochs: 5, ..TrainConfig::default() };
        let mut samples: Vec<_> = (0..6).map(|i| sample(i, 3, &[0.5, 0.5], &mut rng)).collect();
        let init = FilmDecoder::with_plan(3, 2, &cfg.layer_plan, cfg.init, cfg.seed);
        for s in &mut samples {
            s.target = forward_matrix(&init, &s.features, &s.embedding).unwrap().probabilities();
        }
        let (_, log) = train(&samples, &cfg, &mut |_, _| {}).unwrap();
        for l in &log.epoch_losses {
            assert!((l - log.epoch_losses[0]).abs() < 1e-9, "{:?}", log.epoch_losses);
        }
    }

    #[test]
    fn deterministic_across_runtimes() {
        let mut rng = seed::rng(3, "train-test");
        let samples: Vec<_> = (0..10).map(|i| sample(i, 4, &[1.0], &mut rng)).collect();
        let cfg = TrainConfig { layer_plan: vec![8, 4, 1], epochs: 3, batch_size: 4, ..TrainConfig::default() };
        let (a, _) = train(&samples, &cfg, &mut |_, _| {}).unwrap();
        let (b, _) = par::sequential(|| train(&samples, &cfg, &mut |_, _| {})).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nan_aborts_with_dump() {
        let mut rng = seed::rng(4, "train-test");
        let mut samples: Vec<_> = (0..4).map(|i| sample(i, 3, &[1.0], &mut rng)).collect();
        Arc::make_mut(&mut samples[2].features)[(0, 0)] = f64::NAN;
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig { layer_plan: vec![4, 1], epochs: 2, checkpoint_dir: Some(dir.path().into()), ..TrainConfig::default() };
        match train(&samples, &cfg, &mut |_, _| {}) {
            Err(Error::NonFiniteLoss { epoch: 0, batch: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(dir.path().join("nan_batch.json").exists());
    }

    #[test]
    fn checkpoints_every_epoch() {
        let mut rng = seed::rng(5, "train-test");
        let samples: Vec<_> = (0..3).map(|i| sample(i, 3, &[1.0], &mut rng)).collect();
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig { layer_plan: vec![4, 1], epochs: 2, checkpoint_dir: Some(dir.path().into()), ..TrainConfig::default() };
        let mut seen = vec![];
        let (dec, _) = train(&samples, &cfg, &mut |e, l| seen.push((e, l))).unwrap();
        assert_eq!(seen.len(), 2);
        assert_eq!(FilmDecoder::load(&dir.path().join("epoch_002.uadb")).unwrap(), dec);
    }

    #[test]
    fn config_defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.lr), (30, 8, 0.001));
    }
}
