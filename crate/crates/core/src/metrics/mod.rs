//! Saliency-style affordance metrics.
//!
//! Maps are flat row-major slices of equal length; the [`Grid`] wrappers in
//! [`report`] check shapes. Degenerate inputs return a [`Score`] that is
//! either flagged (value kept, e.g. 0) or absent (no value).

use serde::{Deserialize, Serialize};

use crate::geom::Grid;
use crate::{Error, Result};

mod report;

pub use report::{evaluate_set, instruction_for, EvalConfig, EvalRecord, EvalReport, Means, MetricSet, RecordReport, DEFAULT_REWRITES};

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const NSS_THRESHOLD: f64 = 0.1;
pub const NSS_STRICT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// Ground truth has only positives or only negatives.
    SingleClass,
    /// A map to be normalised sums to zero.
    ZeroMap,
    /// Prediction is constant, so it cannot be standardised.
    ZeroVariance,
    /// No ground-truth pixel exceeds the fixation threshold.
    NoFixations,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub value: Option<f64>,
    pub flag: Option<Flag>,
}

impl Score {
    fn ok(v: f64) -> Self {
        Score { value: Some(v), flag: None }
    }

    fn flagged(v: f64, f: Flag) -> Self {
        Score { value: Some(v), flag: Some(f) }
    }

    fn absent(f: Flag) -> Self {
        Score { value: None, flag: Some(f) }
    }
}

/// Rank-based AUC of `prediction` as a score for `gt`; ties share their
/// average rank.
pub fn auc(prediction: &[f64], gt: &[bool]) -> Score {
    assert_eq!(prediction.len(), gt.len(), "prediction and mask sizes differ");
    let n_pos = gt.iter().filter(|&&g| g).count();
    let n_neg = gt.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Score::absent(Flag::SingleClass);
    }
    let mut order: Vec<usize> = (0..prediction.len()).collect();
    order.sort_by(|&a, &b| prediction[a].total_cmp(&prediction[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && prediction[order[j + 1]] == prediction[order[i]] {
            j += 1;
        }
        // ranks are 1-based
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| gt[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Score::ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// KL divergence of the clipped, sum-normalised prediction from the
/// sum-normalised ground truth.
pub fn kld(prediction: &[f64], gt: &[f64], epsilon: f64) -> Score {
    assert_eq!(prediction.len(), gt.len(), "prediction and gt sizes differ");
    let gs: f64 = gt.iter().sum();
    if !(gs > 0.0) {
        return Score::absent(Flag::ZeroMap);
    }
    let clipped: Vec<f64> = prediction.iter().map(|p| p.clamp(epsilon, 1.0 - epsilon)).collect();
    let ps: f64 = clipped.iter().sum();
    let mut total = 0.0;
    for (&p, &g) in clipped.iter().zip(gt) {
        let g = g / gs;
        if g > 0.0 {
            total += g * (g / (p / ps)).ln();
        }
    }
    Score::ok(total.max(0.0))
}

/// Histogram intersection of the two sum-normalised maps.
pub fn sim(prediction: &[f64], gt: &[f64]) -> Score {
    assert_eq!(prediction.len(), gt.len(), "prediction and gt sizes differ");
    let (ps, gs): (f64, f64) = (prediction.iter().sum(), gt.iter().sum());
    if !(ps > 0.0) || !(gs > 0.0) {
        return Score::flagged(0.0, Flag::ZeroMap);
    }
    Score::ok(prediction.iter().zip(gt).map(|(p, g)| (p / ps).min(g / gs)).sum())
}

/// Mean standardised prediction over pixels with `gt > threshold`. The
/// standard deviation is the population one.
pub fn nss(prediction: &[f64], gt: &[f64], threshold: f64) -> Score {
    assert_eq!(prediction.len(), gt.len(), "prediction and gt sizes differ");
    let fix: Vec<usize> = (0..gt.len()).filter(|&i| gt[i] > threshold).collect();
    if fix.is_empty() {
        return Score::absent(Flag::NoFixations);
    }
    // an exactly constant map would otherwise show rounding-level variance
    if prediction.iter().all(|&p| p == prediction[0]) {
        return Score::flagged(0.0, Flag::ZeroVariance);
    }
    let n = prediction.len() as f64;
    let mean = prediction.iter().sum::<f64>() / n;
    let var = prediction.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    Score::ok(fix.iter().map(|&i| (prediction[i] - mean) / sd).sum::<f64>() / fix.len() as f64)
}

/// Binary masks from several annotators for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteStack {
    pub layers: Vec<Grid<bool>>,
}

pub const DEFAULT_ANNOTATORS: usize = 7;
/// A pixel is positive when more than three of seven annotators marked it.
pub const DEFAULT_MIN_VOTES: usize = 4;

/// Pixels marked by at least `min_votes` of exactly `annotators` layers.
pub fn aggregate_votes(stack: &VoteStack, annotators: usize, min_votes: usize) -> Result<Grid<bool>> {
    if stack.layers.len() != annotators {
        return Err(Error::invalid(format!("vote stack has {} layers, expected {annotators}", stack.layers.len())));
    }
    let first = &stack.layers[0];
    if stack.layers.iter().any(|l| !l.same_shape(first)) {
        return Err(Error::shape("vote layers differ in size"));
    }
    let mut out = Grid::filled(first.width, first.height, false);
    for (i, o) in out.data.iter_mut().enumerate() {
        *o = stack.layers.iter().filter(|l| l.data[i]).count() >= min_votes;
    }
    Ok(out)
}

/// Baseline convention for segmentation-style predictions: 1 inside the
/// mask, 0 elsewhere (all zero when there is no mask).
pub fn binarize_mask(mask: Option<&Grid<bool>>, width: usize, height: usize) -> Grid<f64> {
    match mask {
        Some(m) => m.map(|&b| if b { 1.0 } else { 0.0 }),
        None => Grid::filled(width, height, 0.0),
    }
}

/// Baseline convention for similarity-style predictions.
pub fn clip_negative(map: &Grid<f64>) -> Grid<f64> {
    map.map(|&v| v.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;

    /// ROC curve by sweeping thresholds over distinct scores, integrated
    /// with the trapezoid rule.
    fn roc_auc(pred: &[f64], gt: &[bool]) -> f64 {
        let mut th: Vec<f64> = pred.to_vec();
        th.sort_by(|a, b| b.total_cmp(a));
        th.dedup();
        let p = gt.iter().filter(|&&g| g).count() as f64;
        let n = gt.len() as f64 - p;
        let mut pts = vec![(0.0, 0.0)];
        for t in th {
            let tp = pred.iter().zip(gt).filter(|(&s, &g)| s >= t && g).count() as f64;
            let fp = pred.iter().zip(gt).filter(|(&s, &g)| s >= t && !g).count() as f64;
            pts.push((fp / n, tp / p));
        }
        pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
    }

    fn random_maps(n: usize, seed_: u64, levels: u32) -> (Vec<f64>, Vec<f64>) {
        let mut rng = seed::rng(seed_, "metrics-test");
        let q = |r: &mut rand_chacha::ChaCha8Rng| (r.gen_range(0..levels) as f64) / (levels - 1) as f64;
        ((0..n).map(|_| q(&mut rng)).collect(), (0..n).map(|_| q(&mut rng)).collect())
    }

    #[test]
    fn auc_examples() {
        let gt = [true, false, true, false];
        assert_eq!(auc(&[1.0, 0.0, 1.0, 0.0], &gt).value, Some(1.0));
        assert_eq!(auc(&[0.3; 4], &gt).value, Some(0.5));
        assert_eq!(auc(&[0.3; 4], &[true; 4]), Score::absent(Flag::SingleClass));
    }

    #[test]
    fn auc_matches_roc_integration() {
        for s in 0..20 {
            let (pred, g) = random_maps(36, s, 5);
            let gt: Vec<bool> = g.iter().map(|&v| v > 0.5).collect();
            if gt.iter().all(|&b| b) || gt.iter().all(|&b| !b) {
                continue;
            }
            let a = auc(&pred, &gt).value.unwrap();
            assert!((a - roc_auc(&pred, &gt)).abs() < 1e-12);
        }
    }

    #[test]
    fn kld_examples() {
        let g = [0.2, 0.5, 0.3, 0.0];
        assert!(kld(&g, &g, 0.0).value.unwrap().abs() < 1e-15);
        let n = 9;
        let mut delta = vec![0.0; n];
        delta[4] = 1.0;
        assert!((kld(&vec![0.5; n], &delta, 1e-6).value.unwrap() - (n as f64).ln()).abs() < 1e-12);
        assert_eq!(kld(&[0.5; 3], &[0.0; 3], 1e-6).value, None);
    }

    #[test]
    fn kld_matches_scalar_loop() {
        let (p, g) = random_maps(25, 3, 11);
        let eps = 1e-6;
        let mut ps = 0.0;
        for v in &p {
            ps += v.max(eps).min(1.0 - eps);
        }
        let gs: f64 = g.iter().sum();
        let mut expect = 0.0;
        for i in 0..25 {
            if g[i] > 0.0 {
                let q = p[i].max(eps).min(1.0 - eps) / ps;
                expect += g[i] / gs * ((g[i] / gs) / q).ln();
            }
        }
        assert!((kld(&p, &g, eps).value.unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn sim_examples() {
        let a = [0.1, 0.4, 0.5];
        assert!((sim(&a, &a).value.unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(sim(&[1.0, 0.0], &[0.0, 1.0]).value, Some(0.0));
        assert_eq!(sim(&[0.0, 0.0], &[0.0, 1.0]), Score::flagged(0.0, Flag::ZeroMap));
        let (p, g) = random_maps(16, 4, 7);
        let (ps, gs): (f64, f64) = (p.iter().sum(), g.iter().sum());
        let mut expect = 0.0;
        for i in 0..16 {
            expect += f64::min(p[i] / ps, g[i] / gs);
        }
        assert!((sim(&p, &g).value.unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn nss_examples() {
        let n = 16;
        let mut one = vec![0.0; n];
        one[5] = 1.0;
        let mean = 1.0 / n as f64;
        let sd = (((1.0 - mean).powi(2) + (n - 1) as f64 * mean * mean) / n as f64).sqrt();
        assert!((nss(&one, &one, 0.1).value.unwrap() - (1.0 - mean) / sd).abs() < 1e-12);
        assert_eq!(nss(&[0.4; 16], &one, 0.1), Score::flagged(0.0, Flag::ZeroVariance));
        assert_eq!(nss(&one, &[0.05; 16], 0.1), Score::absent(Flag::NoFixations));
    }

    #[test]
    fn nss_matches_scalar_loop() {
        let (p, g) = random_maps(64, 5, 9);
        for th in [NSS_THRESHOLD, NSS_STRICT_THRESHOLD] {
            let mut m = 0.0;
            for v in &p {
                m += v;
            }
            m /= 64.0;
            let mut var = 0.0;
            for v in &p {
                var += (v - m) * (v - m);
            }
            let sd = (var / 64.0).sqrt();
            let (mut s, mut k) = (0.0, 0);
            for i in 0..64 {
                if g[i] > th {
                    s += (p[i] - m) / sd;
                    k += 1;
                }
            }
            assert!((nss(&p, &g, th).value.unwrap() - s / k as f64).abs() < 1e-12);
        }
    }

    fn stack(counts: &[usize]) -> VoteStack {
        let layers = (0..7).map(|a| Grid::from_vec(counts.len(), 1, counts.iter().map(|&c| a < c).collect()).unwrap()).collect();
        VoteStack { layers }
    }

    #[test]
    fn votes() {
        let m = aggregate_votes(&stack(&[7, 3, 4, 0]), 7, DEFAULT_MIN_VOTES).unwrap();
        assert_eq!(m.data, vec![true, false, true, false]);
        let mut short = stack(&[1]);
        short.layers.pop();
        assert!(aggregate_votes(&short, 7, 4).is_err());

        let mut rng = seed::rng(8, "votes");
        let counts: Vec<usize> = (0..50).map(|_| rng.gen_range(0..=7)).collect();
        let m = aggregate_votes(&stack(&counts), 7, 4).unwrap();
        for (i, &c) in counts.iter().enumerate() {
            assert_eq!(m.data[i], c > 3);
        }
    }

    #[test]
    fn baselines() {
        let m = Grid::from_vec(2, 1, vec![true, false]).unwrap();
        assert_eq!(binarize_mask(Some(&m), 2, 1).data, vec![1.0, 0.0]);
        assert_eq!(binarize_mask(None, 2, 1).data, vec![0.0, 0.0]);
        assert_eq!(clip_negative(&Grid::from_vec(2, 1, vec![-0.3, 0.6]).unwrap()).data, vec![0.0, 0.6]);
    }

    proptest! {
        #[test]
        fn auc_monotone_invariant(p in prop::collection::vec(0.0f64..1.0, 12), g in prop::collection::vec(any::<bool>(), 12)) {
            prop_assume!(g.iter().any(|&b| b) && g.iter().any(|&b| !b));
            let t: Vec<f64> = p.iter().map(|v| (3.0 * v).exp() + 2.0).collect();
            prop_assert!((auc(&p, &g).value.unwrap() - auc(&t, &g).value.unwrap()).abs() < 1e-12);
        }

        #[test]
        fn kld_nonnegative(p in prop::collection::vec(0.0f64..1.0, 10), g in prop::collection::vec(0.01f64..1.0, 10)) {
            prop_assert!(kld(&p, &g, DEFAULT_EPSILON).value.unwrap() >= 0.0);
        }

        #[test]
        fn sim_symmetric_bounded(p in prop::collection::vec(0.01f64..1.0, 10), g in prop::collection::vec(0.01f64..1.0, 10)) {
            let a = sim(&p, &g).value.unwrap();
            prop_assert!((a - sim(&g, &p).value.unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
        }

        #[test]
        fn nss_affine_invariant(p in prop::collection::vec(0.0f64..1.0, 10), g in prop::collection::vec(0.0f64..1.0, 10), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let s = nss(&p, &g, 0.1);
            prop_assume!(s.flag.is_none());
            let t: Vec<f64> = p.iter().map(|v| a * v + b).collect();
            prop_assert!((s.value.unwrap() - nss(&t, &g, 0.1).value.unwrap()).abs() < 1e-9);
        }

        #[test]
        fn votes_monotone(counts in prop::collection::vec(0usize..7, 20), extra in prop::collection::vec(any::<bool>(), 20)) {
            let base = stack(&counts);
            let mut more = base.clone();
            for (i, &e) in extra.iter().enumerate() {
                if e {
                    more.layers[3].data[i] = true;
                }
            }
            let a = aggregate_votes(&base, 7, 4).unwrap();
            let b = aggregate_votes(&more, 7, 4).unwrap();
            for i in 0..20 {
                prop_assert!(!a.data[i] || b.data[i]);
            }
        }
    }
}
