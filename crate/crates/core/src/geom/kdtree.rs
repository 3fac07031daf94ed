use super::Point3;

const LEAF: usize = 8;

/// Exact nearest-neighbour index over 3-D points (implicit median kd-tree).
///
/// Ties on distance resolve to the lowest point index, matching a linear scan.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<[f64; 3]>,
    order: Vec<u32>,
    split_dim: Vec<u8>,
}

impl SpatialIndex {
    pub fn new(points: &[Point3]) -> Self {
        Self::from_coords(points.iter().map(|p| [p.x, p.y, p.z]).collect())
    }

    pub fn from_coords(points: Vec<[f64; 3]>) -> Self {
        let n = points.len();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut split_dim = vec![0u8; n];
        build(&points, &mut order, &mut split_dim);
        SpatialIndex { points, order, split_dim }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the nearest point.
    pub fn nearest(&self, q: [f64; 3]) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        self.nearest_in(q, 0, self.order.len(), &mut best);
        Some((best.1, best.0))
    }

    pub fn nearest_point(&self, q: &Point3) -> Option<(usize, f64)> {
        self.nearest([q.x, q.y, q.z])
    }

    /// Indices of all points within `radius` (inclusive), ascending.
    pub fn within(&self, q: [f64; 3], radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            self.within_in(q, radius * radius, 0, self.order.len(), &mut out);
        }
        out.sort_unstable();
        out
    }

    fn nearest_in(&self, q: [f64; 3], lo: usize, hi: usize, best: &mut (f64, usize)) {
        if hi - lo <= LEAF {
            for &i in &self.order[lo..hi] {
                let d = dist2(&self.points[i as usize], &q);
                if d < best.0 || (d == best.0 && (i as usize) < best.1) {
                    *best = (d, i as usize);
                }
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let pivot = self.order[mid] as usize;
        let dim = self.split_dim[mid] as usize;
        let diff = q[dim] - self.points[pivot][dim];
        let d = dist2(&self.points[pivot], &q);
        if d < best.0 || (d == best.0 && pivot < best.1) {
            *best = (d, pivot);
        }
        let (first, second) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.nearest_in(q, first.0, first.1, best);
        if diff * diff <= best.0 {
            self.nearest_in(q, second.0, second.1, best);
        }
    }

    fn within_in(&self, q: [f64; 3], r2: f64, lo: usize, hi: usize, out: &mut Vec<usize>) {
        if hi - lo <= LEAF {
            out.extend(self.order[lo..hi].iter().map(|&i| i as usize).filter(|&i| dist2(&self.points[i], &q) <= r2));
            return;
        }
        let mid = (lo + hi) / 2;
        let pivot = self.order[mid] as usize;
        let dim = self.split_dim[mid] as usize;
        let diff = q[dim] - self.points[pivot][dim];
        if dist2(&self.points[pivot], &q) <= r2 {
            out.push(pivot);
        }
        if diff <= 0.0 || diff * diff <= r2 {
            self.within_in(q, r2, lo, mid, out);
        }
        if diff >= 0.0 || diff * diff <= r2 {
            self.within_in(q, r2, mid + 1, hi, out);
        }
    }
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn build(points: &[[f64; 3]], order: &mut [u32], split_dim: &mut [u8]) {
    let n = order.len();
    if n <= LEAF {
        return;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order.iter() {
        for d in 0..3 {
            lo[d] = lo[d].min(points[i as usize][d]);
            hi[d] = hi[d].max(points[i as usize][d]);
        }
    }
    let dim = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap();
    let mid = n / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a as usize][dim].total_cmp(&points[b as usize][dim]).then(a.cmp(&b)));
    split_dim[mid] = dim as u8;
    let (left, rest) = order.split_at_mut(mid);
    let (ld, rd) = split_dim.split_at_mut(mid);
    build(points, left, ld);
    build(points, &mut rest[1..], &mut rd[1..]);
}
