use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{auc, kld, nss, sim, Flag, Score, DEFAULT_EPSILON, NSS_STRICT_THRESHOLD, NSS_THRESHOLD};
use crate::geom::Grid;
use crate::io::tensor::write_atomic;
use crate::{par, Error, Result};

/// Query rewrites for ambiguous (action, object) pairs.
pub const DEFAULT_REWRITES: [(&str, &str, &str); 5] = [
    ("hit", "axe", "handle of axe to hold during hitting"),
    ("ride", "bicycle", "region to sit on and push the bicycle"),
    ("pour", "cup", "handle of the cup to hold while pouring"),
    ("wash", "cup", "rim of the cup to wash"),
    ("hold", "cup", "handle to hold the cup"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub epsilon: f64,
    pub nss_threshold: f64,
    pub nss_strict_threshold: f64,
    /// Ground truth above this counts as positive for AUC.
    pub auc_threshold: f64,
    /// `"action-object"` → instruction.
    pub rewrites: BTreeMap<String, String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            epsilon: DEFAULT_EPSILON,
            nss_threshold: NSS_THRESHOLD,
            nss_strict_threshold: NSS_STRICT_THRESHOLD,
            auc_threshold: 0.5,
            rewrites: DEFAULT_REWRITES.iter().map(|(a, o, t)| (format!("{a}-{o}"), t.to_string())).collect(),
        }
    }
}

/// "region to <action> the <object>", unless the pair has a rewrite.
pub fn instruction_for(action: &str, object: &str, rewrites: &BTreeMap<String, String>) -> String {
    rewrites.get(&format!("{action}-{object}")).cloned().unwrap_or_else(|| format!("region to {action} the {object}"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub id: String,
    pub prediction: Grid<f64>,
    pub ground_truth: Grid<f64>,
    pub instruction: Option<String>,
    /// `(action, object)`; when present the instruction is templated from it.
    pub action_object: Option<(String, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub auc: Option<f64>,
    pub kld: Option<f64>,
    pub sim: Option<f64>,
    pub nss: Option<f64>,
    pub nss05: Option<f64>,
}

impl MetricSet {
    const NAMES: [&'static str; 5] = ["auc", "kld", "sim", "nss", "nss05"];

    fn values(&self) -> [Option<f64>; 5] {
        [self.auc, self.kld, self.sim, self.nss, self.nss05]
    }

    fn from_values(v: [Option<f64>; 5]) -> Self {
        MetricSet { auc: v[0], kld: v[1], sim: v[2], nss: v[3], nss05: v[4] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordReport {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    pub metrics: MetricSet,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub flags: BTreeMap<String, Flag>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// Unweighted means over the records where each metric is defined.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Means {
    #[serde(flatten)]
    pub values: MetricSet,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<RecordReport>,
    pub means: Means,
    pub config_echo: serde_json::Value,
}

fn evaluate_one(r: &EvalRecord, config: &EvalConfig) -> RecordReport {
    let instruction = match &r.action_object {
        Some((a, o)) => Some(instruction_for(a, o, &config.rewrites)),
        None => r.instruction.clone(),
    };
    let mut out = RecordReport { id: r.id.clone(), instruction, metrics: MetricSet::default(), flags: BTreeMap::new(), error: None };
    if !r.prediction.same_shape(&r.ground_truth) {
        out.error = Some(format!(
            "prediction is {}×{}, ground truth {}×{}",
            r.prediction.height, r.prediction.width, r.ground_truth.height, r.ground_truth.width
        ));
        return out;
    }
    if let Some(bad) = r.prediction.data.iter().chain(&r.ground_truth.data).find(|v| !v.is_finite()) {
        out.error = Some(format!("non-finite value {bad}"));
        return out;
    }
    let (p, g) = (&r.prediction.data, &r.ground_truth.data);
    let mask: Vec<bool> = g.iter().map(|&v| v > config.auc_threshold).collect();
    let scores: [Score; 5] =
        [auc(p, &mask), kld(p, g, config.epsilon), sim(p, g), nss(p, g, config.nss_threshold), nss(p, g, config.nss_strict_threshold)];
    for (name, s) in MetricSet::NAMES.iter().zip(&scores) {
        if let Some(f) = s.flag {
            out.flags.insert(name.to_string(), f);
        }
    }
    out.metrics = MetricSet::from_values(scores.map(|s| s.value));
    out
}

/// Scores every record (in parallel) and averages. Individual failures are
/// recorded on the record and excluded from the means.
pub fn evaluate_set(records: &[EvalRecord], config: &EvalConfig) -> EvalReport {
    let reports = par::map_slice(records, |r| evaluate_one(r, config));
    let mut sums = [0.0; 5];
    let mut counts = [0usize; 5];
    for r in &reports {
        for (k, v) in r.metrics.values().iter().enumerate() {
            if let Some(v) = v {
                sums[k] += v;
                counts[k] += 1;
            }
        }
    }
    let means = std::array::from_fn(|k| (counts[k] > 0).then(|| sums[k] / counts[k] as f64));
    EvalReport {
        records: reports,
        means: Means {
            values: MetricSet::from_values(means),
            counts: MetricSet::NAMES.iter().zip(counts).map(|(n, c)| (n.to_string(), c)).collect(),
        },
        config_echo: serde_json::json!({
            "epsilon": config.epsilon,
            "thresholds": { "nss": config.nss_threshold, "nss05": config.nss_strict_threshold, "auc": config.auc_threshold },
            "normalization": "sum",
            "std": "population",
            "rewrites": config.rewrites,
        }),
    }
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "instruction", "auc", "kld", "sim", "nss", "nss05", "error"])?;
        for r in &self.records {
            let mut row = vec![r.id.clone(), r.instruction.clone().unwrap_or_default()];
            row.extend(r.metrics.values().iter().map(|v| v.map(|v| v.to_string()).unwrap_or_default()));
            row.push(r.error.clone().unwrap_or_default());
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv flush: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv()?.as_bytes())
    }
}
