//! Candidate region proposal: PCA reduction of the fused features followed by
//! mean-shift, with a k-means fallback and a per-link pathway for articulated
//! objects.

mod cluster;
mod overlay;
mod pca;

use std::collections::BTreeMap;

pub use cluster::{adjusted_rand_index, canonicalize, estimate_bandwidth, kmeans, mean_shift, Clustering, KMeans};
pub use overlay::{palette_color, region_colors, render_region_overlay, size_rank, LegendEntry, Overlay, PALETTE};
pub use pca::{pca_reduce, ReducedField};

use crate::fusion::FeatureField;
use crate::geom::PointCloud;
use crate::{par, seed, Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RegionConfig {
    pub pca_dims: usize,
    /// Pairwise-distance quantile used as the mean-shift bandwidth.
    pub bandwidth_quantile: f64,
    pub bandwidth_sample: usize,
    /// Fixed bandwidth; overrides the quantile estimate when set.
    pub bandwidth: Option<f64>,
    /// Whole-object clusterings with fewer regions are redone with k-means at this k.
    pub min_regions: usize,
    pub seed: u64,
}

impl Default for RegionConfig {
    fn default() -> Self {
        RegionConfig { pca_dims: 3, bandwidth_quantile: 0.25, bandwidth_sample: 512, bandwidth: None, min_regions: 5, seed: 0 }
    }
}

/// How a group of points was clustered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterPath {
    /// Zero feature variance: one region, no clustering.
    Constant,
    MeanShift,
    KMeansFallback,
}

/// Region label per point. Labels run `1..=num_regions`; 0 marks points that
/// were never visible and therefore carry no label.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RegionLabeling {
    pub labels: Vec<u32>,
    pub num_regions: u32,
    /// Link id → inclusive label range, when clustered per link.
    pub per_link: BTreeMap<u32, (u32, u32)>,
    /// Path taken per group: one entry for whole-object clustering, one per link otherwise.
    pub paths: Vec<ClusterPath>,
    /// Mean-shift cluster count before any fallback (summed over links).
    pub mean_shift_regions: usize,
}

impl RegionLabeling {
    pub fn members(&self, region: u32) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &l)| l == region).map(|(i, _)| i).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.num_regions as usize + 1];
        for &l in &self.labels {
            s[l as usize] += 1;
        }
        s
    }
}

struct GroupResult {
    labels: Vec<u32>,
    count: usize,
    path: ClusterPath,
    mean_shift: usize,
}

fn cluster_group(field: &FeatureField, config: &RegionConfig, fallback: bool, stream: &str) -> Result<GroupResult> {
    let reduced = pca_reduce(field, config.pca_dims.min(field.dim))?;
    if reduced.is_constant() {
        return Ok(GroupResult { labels: vec![0; field.len()], count: 1, path: ClusterPath::Constant, mean_shift: 1 });
    }
    let coords = reduced.coords3();
    let seed = seed::derive_seed(config.seed, stream);
    let bw = config.bandwidth.unwrap_or_else(|| estimate_bandwidth(&coords, config.bandwidth_quantile, config.bandwidth_sample, seed));
    let bw = if bw > 0.0 {
        bw
    } else {
        // quantile fell on coincident pairs; use the largest spread instead
        estimate_bandwidth(&coords, 1.0, config.bandwidth_sample, seed).max(f64::MIN_POSITIVE)
    };
    let ms = mean_shift(&coords, bw);
    if fallback && ms.count < config.min_regions {
        let km = kmeans(&coords, config.min_regions, seed);
        return Ok(GroupResult {
            labels: km.clustering.labels,
            count: km.clustering.count,
            path: ClusterPath::KMeansFallback,
            mean_shift: ms.count,
        });
    }
    Ok(GroupResult { labels: ms.labels, count: ms.count, path: ClusterPath::MeanShift, mean_shift: ms.count })
}

/// Clusters the valid points of `field` into candidate regions.
///
/// With two or more link ids in `cloud`, each link is clustered on its own
/// (no k-means fallback) and labels are offset in ascending link order.
/// Otherwise the whole object is clustered with mean-shift and redone with
/// k-means when fewer than `config.min_regions` clusters appear.
pub fn propose_regions(field: &FeatureField, cloud: &PointCloud, config: &RegionConfig) -> Result<RegionLabeling> {
    if field.len() != cloud.len() {
        return Err(Error::shape(format!("{} feature rows for {} points", field.len(), cloud.len())));
    }
    let valid = field.valid_indices();
    if valid.is_empty() {
        return Err(Error::invalid("no valid points to cluster"));
    }
    let mut labels = vec![0u32; field.len()];
    let links = cloud.links();

    if links.len() < 2 {
        let g = cluster_group(&field.subset(&valid), config, true, "regions")?;
        for (&i, &l) in valid.iter().zip(&g.labels) {
            labels[i] = l + 1;
        }
        return Ok(RegionLabeling {
            labels,
            num_regions: g.count as u32,
            per_link: BTreeMap::new(),
            paths: vec![g.path],
            mean_shift_regions: g.mean_shift,
        });
    }

    // unlabelled points form their own trailing group
    let mut groups: Vec<(Option<u32>, Vec<usize>)> = links.iter().map(|&l| (Some(l), Vec::new())).collect();
    groups.push((None, Vec::new()));
    for &i in &valid {
        let slot = match cloud.link_id[i] {
            Some(l) => links.binary_search(&l).unwrap(),
            None => links.len(),
        };
        groups[slot].1.push(i);
    }
    groups.retain(|(_, members)| !members.is_empty());

    let results = par::map_slice(&groups, |(link, members)| {
        let stream = format!("regions/link{}", link.map_or(-1, |l| l as i64));
        cluster_group(&field.subset(members), config, false, &stream)
    });
    let mut offset = 0u32;
    let mut per_link = BTreeMap::new();
    let mut paths = Vec::new();
    let mut ms_total = 0;
    for ((link, members), res) in groups.iter().zip(results) {
        let g = res?;
        for (&i, &l) in members.iter().zip(&g.labels) {
            labels[i] = offset + l + 1;
        }
        if let Some(l) = link {
            per_link.insert(*l, (offset + 1, offset + g.count as u32));
        }
        offset += g.count as u32;
        paths.push(g.path);
        ms_total += g.mean_shift;
    }
    Ok(RegionLabeling { labels, num_regions: offset, per_link, paths, mean_shift_regions: ms_total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point3;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn cloud(n: usize, links: Option<&[u32]>) -> PointCloud {
        PointCloud {
            points: (0..n).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect(),
            source_view: vec![0; n],
            source_pixel: (0..n as u32).collect(),
            link_id: (0..n).map(|i| links.map(|l| l[i])).collect(),
        }
    }

    /// `groups` clusters of `per` points around well-separated signatures.
    fn field_with_groups(groups: usize, per: usize, dim: usize, noise: f64, seed: u64) -> (FeatureField, Vec<u32>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, noise.max(1e-300)).unwrap();
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for g in 0..groups {
            for _ in 0..per {
                for j in 0..dim {
                    // cube-vertex signatures keep up to 8 groups apart in the top 3 axes
                    let base = if j < 3 { ((g >> j) & 1) as f64 } else { 0.0 };
                    rows.push(base + if noise > 0.0 { n.sample(&mut rng) } else { 0.0 });
                }
                truth.push(g as u32);
            }
        }
        (FeatureField::new(rows, vec![1; groups * per], dim).unwrap(), truth)
    }

    #[test]
    fn two_uniform_links_give_two_regions() {
        let (field, _) = field_with_groups(2, 30, 8, 0.0, 0);
        let links: Vec<u32> = (0..60).map(|i| (i / 30) as u32 + 3).collect();
        let r = propose_regions(&field, &cloud(60, Some(&links)), &RegionConfig::default()).unwrap();
        assert_eq!(r.num_regions, 2);
        assert_eq!(r.per_link[&3], (1, 1));
        assert_eq!(r.per_link[&4], (2, 2));
        assert_eq!(r.paths, vec![ClusterPath::Constant, ClusterPath::Constant]);
    }

    #[test]
    fn few_clusters_fall_back_to_kmeans() {
        let (field, _) = field_with_groups(3, 60, 8, 0.02, 1);
        let r = propose_regions(&field, &cloud(180, None), &RegionConfig::default()).unwrap();
        assert_eq!(r.mean_shift_regions, 3);
        assert_eq!(r.paths, vec![ClusterPath::KMeansFallback]);
        assert_eq!(r.num_regions, 5);
    }

    #[test]
    fn many_clusters_kept() {
        let (field, truth) = field_with_groups(7, 40, 8, 0.02, 2);
        let cfg = RegionConfig { bandwidth: Some(0.4), ..RegionConfig::default() };
        let r = propose_regions(&field, &cloud(280, None), &cfg).unwrap();
        assert_eq!(r.paths, vec![ClusterPath::MeanShift]);
        assert_eq!(r.num_regions, 7);
        let got: Vec<u32> = r.labels.iter().map(|l| l - 1).collect();
        assert!(adjusted_rand_index(&got, &truth) > 0.99);
    }

    #[test]
    fn invalid_points_unlabelled() {
        let (mut field, _) = field_with_groups(2, 10, 4, 0.0, 0);
        field.visible_count[3] = 0;
        let r = propose_regions(&field, &cloud(20, None), &RegionConfig::default()).unwrap();
        assert_eq!(r.labels[3], 0);
        assert!(r.labels.iter().enumerate().all(|(i, &l)| i == 3 || l >= 1));
        assert!(r.num_regions >= 1);
    }

    #[test]
    fn labels_ignore_point_positions() {
        let (field, _) = field_with_groups(3, 20, 6, 0.05, 4);
        let c = cloud(60, None);
        let mut moved = c.clone();
        for p in &mut moved.points {
            *p = Point3::new(-p.y + 3.0, p.x * 1.0, p.z - 7.0);
        }
        let cfg = RegionConfig::default();
        assert_eq!(propose_regions(&field, &c, &cfg).unwrap(), propose_regions(&field, &moved, &cfg).unwrap());
    }
}
