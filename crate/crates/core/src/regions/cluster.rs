use rand::seq::index::sample;
use rand::Rng;

use crate::geom::SpatialIndex;
use crate::{par, seed};

/// Flat cluster assignment with 0-based labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub labels: Vec<u32>,
    pub count: usize,
}

/// Renumbers labels by descending cluster size, ties by smallest member index.
pub fn canonicalize(labels: &[u32]) -> Clustering {
    let max = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let mut size = vec![0usize; max];
    let mut first = vec![usize::MAX; max];
    for (i, &l) in labels.iter().enumerate() {
        size[l as usize] += 1;
        first[l as usize] = first[l as usize].min(i);
    }
    let mut used: Vec<usize> = (0..max).filter(|&l| size[l] > 0).collect();
    used.sort_by(|&a, &b| size[b].cmp(&size[a]).then(first[a].cmp(&first[b])));
    let mut remap = vec![0u32; max];
    for (new, &old) in used.iter().enumerate() {
        remap[old] = new as u32;
    }
    Clustering { labels: labels.iter().map(|&l| remap[l as usize]).collect(), count: used.len() }
}

#[inline]
fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Quantile of pairwise distances over a seeded subsample of at most `sample_size` points.
pub fn estimate_bandwidth(coords: &[[f64; 3]], quantile: f64, sample_size: usize, seed: u64) -> f64 {
    if coords.len() < 2 {
        return 0.0;
    }
    let mut rng = seed::rng(seed, "bandwidth");
    let picked: Vec<usize> = if coords.len() > sample_size {
        let mut v = sample(&mut rng, coords.len(), sample_size).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..coords.len()).collect()
    };
    let mut dists = Vec::with_capacity(picked.len() * (picked.len() - 1) / 2);
    for (a, &i) in picked.iter().enumerate() {
        for &j in &picked[a + 1..] {
            dists.push(d2(&coords[i], &coords[j]).sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let q = quantile.clamp(0.0, 1.0);
    dists[((dists.len() - 1) as f64 * q).round() as usize]
}

/// Flat-kernel mean shift. Every point is shifted to convergence; converged
/// positions closer than `bandwidth / 2` to a better-supported mode are merged
/// into it.
pub fn mean_shift(coords: &[[f64; 3]], bandwidth: f64) -> Clustering {
    assert!(bandwidth > 0.0, "bandwidth must be positive");
    if coords.is_empty() {
        return Clustering { labels: vec![], count: 0 };
    }
    let index = SpatialIndex::from_coords(coords.to_vec());
    let tol2 = (1e-4 * bandwidth).powi(2);
    let converged: Vec<[f64; 3]> = par::map_slice(coords, |&start| {
        let mut x = start;
        for _ in 0..300 {
            let members = index.within(x, bandwidth);
            if members.is_empty() {
                break;
            }
            let mut m = [0.0; 3];
            for &j in &members {
                for d in 0..3 {
                    m[d] += coords[j][d];
                }
            }
            let k = members.len() as f64;
            let next = [m[0] / k, m[1] / k, m[2] / k];
            let moved = d2(&next, &x);
            x = next;
            if moved <= tol2 {
                break;
            }
        }
        x
    });
    let support: Vec<usize> = par::map_slice(&converged, |&c| index.within(c, bandwidth).len());

    let mut order: Vec<usize> = (0..coords.len()).collect();
    order.sort_by(|&a, &b| support[b].cmp(&support[a]).then(a.cmp(&b)));
    let merge2 = (bandwidth / 2.0).powi(2);
    let mut modes: Vec<[f64; 3]> = Vec::new();
    for &i in &order {
        if modes.iter().all(|m| d2(m, &converged[i]) >= merge2) {
            modes.push(converged[i]);
        }
    }
    let labels: Vec<u32> =
        converged.iter().map(|c| (0..modes.len()).min_by(|&a, &b| d2(&modes[a], c).total_cmp(&d2(&modes[b], c))).unwrap() as u32).collect();
    canonicalize(&labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub clustering: Clustering,
    pub centroids: Vec<[f64; 3]>,
    /// Within-cluster sum of squared distances.
    pub inertia: f64,
    /// Set when fewer distinct points than requested clusters forced a smaller k.
    pub reduced: bool,
}

const KMEANS_MAX_ITER: usize = 100;
const KMEANS_RESTARTS: usize = 10;

/// Lloyd's algorithm from k-means++ seeding, best of several seeded restarts.
pub fn kmeans(coords: &[[f64; 3]], k_clusters: usize, seed: u64) -> KMeans {
    let mut distinct: Vec<[f64; 3]> = coords.to_vec();
    distinct.sort_by(|a, b| a.iter().zip(b).fold(std::cmp::Ordering::Equal, |o, (x, y)| o.then(x.total_cmp(y))));
    distinct.dedup();
    let k = k_clusters.min(distinct.len()).max(1);
    let reduced = k < k_clusters;
    if coords.is_empty() {
        return KMeans { clustering: Clustering { labels: vec![], count: 0 }, centroids: vec![], inertia: 0.0, reduced };
    }
    let mut rng = seed::rng(seed, "kmeans");
    let mut best: Option<(f64, Vec<u32>, Vec<[f64; 3]>)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let (labels, cents, inertia) = lloyd(coords, plus_plus(coords, k, &mut rng));
        if best.as_ref().is_none_or(|b| inertia < b.0) {
            best = Some((inertia, labels, cents));
        }
        if k == 1 {
            break;
        }
    }
    let (inertia, labels, cents) = best.unwrap();
    let clustering = canonicalize(&labels);
    let mut centroids = vec![[0.0; 3]; clustering.count];
    for (old, new) in labels.iter().zip(&clustering.labels) {
        centroids[*new as usize] = cents[*old as usize];
    }
    KMeans { clustering, centroids, inertia, reduced }
}

fn plus_plus(coords: &[[f64; 3]], k: usize, rng: &mut impl Rng) -> Vec<[f64; 3]> {
    let mut cents = vec![coords[rng.gen_range(0..coords.len())]];
    let mut dist: Vec<f64> = coords.iter().map(|p| d2(p, &cents[0])).collect();
    while cents.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.gen::<f64>() * total;
            let mut pick = dist.len() - 1;
            for (i, &d) in dist.iter().enumerate() {
                if t < d {
                    pick = i;
                    break;
                }
                t -= d;
            }
            pick
        } else {
            rng.gen_range(0..coords.len())
        };
        let c = coords[pick];
        cents.push(c);
        for (d, p) in dist.iter_mut().zip(coords) {
            *d = d.min(d2(p, &c));
        }
    }
    cents
}

fn nearest(cents: &[[f64; 3]], p: &[f64; 3]) -> (u32, f64) {
    let mut best = (0u32, f64::INFINITY);
    for (c, cent) in cents.iter().enumerate() {
        let d = d2(cent, p);
        if d < best.1 {
            best = (c as u32, d);
        }
    }
    best
}

fn lloyd(coords: &[[f64; 3]], mut cents: Vec<[f64; 3]>) -> (Vec<u32>, Vec<[f64; 3]>, f64) {
    let k = cents.len();
    let mut labels: Vec<u32> = coords.iter().map(|p| nearest(&cents, p).0).collect();
    for _ in 0..KMEANS_MAX_ITER {
        let mut sum = vec![[0.0; 3]; k];
        let mut cnt = vec![0usize; k];
        for (p, &l) in coords.iter().zip(&labels) {
            for d in 0..3 {
                sum[l as usize][d] += p[d];
            }
            cnt[l as usize] += 1;
        }
        for c in 0..k {
            if cnt[c] > 0 {
                cents[c] = [sum[c][0] / cnt[c] as f64, sum[c][1] / cnt[c] as f64, sum[c][2] / cnt[c] as f64];
            }
        }
        let next: Vec<u32> = coords.iter().map(|p| nearest(&cents, p).0).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    let inertia = coords.iter().zip(&labels).map(|(p, &l)| d2(p, &cents[l as usize])).sum();
    (labels, cents, inertia)
}

/// Adjusted Rand index between two flat labelings of the same points.
pub fn adjusted_rand_index(a: &[u32], b: &[u32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let mut table = std::collections::HashMap::<(u32, u32), u64>::new();
    let mut ra = std::collections::HashMap::<u32, u64>::new();
    let mut rb = std::collections::HashMap::<u32, u64>::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let c2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&v| c2(v)).sum();
    let sa: f64 = ra.values().map(|&v| c2(v)).sum();
    let sb: f64 = rb.values().map(|&v| c2(v)).sum();
    let expected = sa * sb / c2(n as u64);
    let max = 0.5 * (sa + sb);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn blobs(centers: &[[f64; 3]], per: usize, sigma: f64, seed: u64) -> (Vec<[f64; 3]>, Vec<u32>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, sigma).unwrap();
        let mut pts = Vec::new();
        let mut lab = Vec::new();
        for (c, ctr) in centers.iter().enumerate() {
            for _ in 0..per {
                pts.push([ctr[0] + n.sample(&mut rng), ctr[1] + n.sample(&mut rng), ctr[2] + n.sample(&mut rng)]);
                lab.push(c as u32);
            }
        }
        (pts, lab)
    }

    #[test]
    fn canonical_order() {
        let c = canonicalize(&[5, 5, 2, 9, 9, 9, 2]);
        assert_eq!(c.labels, vec![1, 1, 2, 0, 0, 0, 2]);
        assert_eq!(c.count, 3);
    }

    #[test]
    fn ari_basics() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]);
        assert!(v < 0.0);
    }

    #[test]
    fn mean_shift_two_separated_blobs() {
        let (pts, lab) = blobs(&[[0.0; 3], [10.0, 0.0, 0.0]], 50, 0.1, 1);
        let c = mean_shift(&pts, 1.0);
        assert_eq!(c.count, 2);
        assert_eq!(adjusted_rand_index(&c.labels, &lab), 1.0);
    }

    #[test]
    fn mean_shift_coincident_points() {
        let c = mean_shift(&vec![[1.0, 2.0, 3.0]; 20], 0.5);
        assert_eq!(c.count, 1);
    }

    #[test]
    fn mean_shift_gaussian_mixture_ari() {
        let (pts, lab) = blobs(&[[0.0; 3], [3.0, 0.0, 0.0], [0.0, 3.0, 1.0]], 100, 0.4, 5);
        let bw = estimate_bandwidth(&pts, 0.25, 512, 0);
        let c = mean_shift(&pts, bw);
        let ari = adjusted_rand_index(&c.labels, &lab);
        assert!(ari >= 0.9, "ari {ari}, {} clusters, bw {bw}", c.count);
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let pts = vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [1.0, 3.0, 0.0]];
        let r = kmeans(&pts, 1, 0);
        assert_eq!(r.clustering.count, 1);
        assert!((r.centroids[0][0] - 1.0).abs() < 1e-15 && (r.centroids[0][1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn kmeans_recovers_blobs() {
        let ctrs = [[0.0; 3], [10.0, 0.0, 0.0], [0.0, 10.0, 0.0], [0.0, 0.0, 10.0], [10.0, 10.0, 10.0]];
        let (pts, lab) = blobs(&ctrs, 30, 0.2, 2);
        let r = kmeans(&pts, 5, 3);
        assert_eq!(adjusted_rand_index(&r.clustering.labels, &lab), 1.0);
    }

    #[test]
    fn kmeans_beats_random_restarts() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let pts: Vec<[f64; 3]> = (0..200).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let ours = kmeans(&pts, 5, 1).inertia;
        // baseline: Lloyd from 50 uniformly random initial centroids
        let mut best = f64::INFINITY;
        for _ in 0..50 {
            let mut cents: Vec<[f64; 3]> = (0..5).map(|_| pts[rng.gen_range(0..200)]).collect();
            for _ in 0..100 {
                let lab: Vec<usize> =
                    pts.iter().map(|p| (0..5).min_by(|&a, &b| d2(&cents[a], p).total_cmp(&d2(&cents[b], p))).unwrap()).collect();
                for c in 0..5 {
                    let m: Vec<&[f64; 3]> = pts.iter().zip(&lab).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
                    if !m.is_empty() {
                        cents[c] = [0, 1, 2].map(|d| m.iter().map(|p| p[d]).sum::<f64>() / m.len() as f64);
                    }
                }
            }
            let inertia: f64 = pts.iter().map(|p| cents.iter().map(|c| d2(c, p)).fold(f64::INFINITY, f64::min)).sum();
            best = best.min(inertia);
        }
        assert!(ours <= best * 1.05, "{ours} vs {best}");
    }

    #[test]
    fn kmeans_reduces_k_on_duplicates() {
        let pts = vec![[0.0; 3], [0.0; 3], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let r = kmeans(&pts, 5, 0);
        assert!(r.reduced);
        assert_eq!(r.clustering.count, 2);
    }

    #[test]
    fn deterministic_given_seed() {
        let (pts, _) = blobs(&[[0.0; 3], [1.0, 1.0, 1.0]], 40, 0.5, 9);
        assert_eq!(kmeans(&pts, 5, 4), kmeans(&pts, 5, 4));
        assert_eq!(estimate_bandwidth(&pts, 0.25, 16, 3), estimate_bandwidth(&pts, 0.25, 16, 3));
    }
}
