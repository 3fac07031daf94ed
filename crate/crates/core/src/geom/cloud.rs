use std::collections::{HashMap, HashSet};

use super::camera::CameraView;
use super::Point3;
use crate::{Error, Result};

/// Default number of points kept per object by [`downsample`].
pub const DEFAULT_TARGET_POINTS: usize = 8192;

/// World-frame object points with per-point provenance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub source_view: Vec<u32>,
    /// Row-major pixel index in the source view.
    pub source_pixel: Vec<u32>,
    pub link_id: Vec<Option<u32>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            source_view: indices.iter().map(|&i| self.source_view[i]).collect(),
            source_pixel: indices.iter().map(|&i| self.source_pixel[i]).collect(),
            link_id: indices.iter().map(|&i| self.link_id[i]).collect(),
        }
    }

    /// Distinct link ids in ascending order, ignoring unlabelled points.
    pub fn links(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.link_id.iter().flatten().copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn centroid(&self) -> Option<Point3> {
        if self.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(nalgebra::Vector3::zeros(), |acc, p| acc + p.coords);
        Some(Point3::from(sum / self.len() as f64))
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
    }

    fn extend(&mut self, other: PointCloud) {
        self.points.extend(other.points);
        self.source_view.extend(other.source_view);
        self.source_pixel.extend(other.source_pixel);
        self.link_id.extend(other.link_id);
    }
}

/// One world point per foreground pixel, in row-major pixel order.
pub fn backproject_view(view: &CameraView) -> PointCloud {
    backproject_indexed(view, 0)
}

pub(crate) fn backproject_indexed(view: &CameraView, view_index: u32) -> PointCloud {
    let mut cloud = PointCloud::default();
    for row in 0..view.height() {
        for col in 0..view.width() {
            if !*view.fg_mask.get(row, col) {
                continue;
            }
            cloud.points.push(view.backproject_pixel(row, col));
            cloud.source_view.push(view_index);
            cloud.source_pixel.push(view.fg_mask.idx(row, col) as u32);
            cloud.link_id.push(view.link_map.as_ref().map(|l| *l.get(row, col)));
        }
    }
    if cloud.is_empty() {
        log::warn!("view {view_index} has an empty foreground mask");
    }
    cloud
}

/// Union of the backprojected foregrounds of all views, in view order.
pub fn aggregate_scene(views: &[CameraView]) -> Result<PointCloud> {
    let first = views.first().ok_or_else(|| Error::invalid("no views"))?;
    if views.iter().any(|v| v.width() != first.width() || v.height() != first.height()) {
        return Err(Error::shape("views have different image sizes"));
    }
    let parts = crate::par::map_range(views.len(), |i| backproject_indexed(&views[i], i as u32));
    let mut cloud = PointCloud::default();
    for p in parts {
        cloud.extend(p);
    }
    Ok(cloud)
}

type VoxelKey = (i64, i64, i64);

fn voxel_key(p: &Point3, origin: &Point3, size: f64) -> VoxelKey {
    let q = (p - origin) / size;
    (q.x.floor() as i64, q.y.floor() as i64, q.z.floor() as i64)
}

fn voxel_count(points: &[Point3], origin: &Point3, size: f64) -> usize {
    points.iter().map(|p| voxel_key(p, origin, size)).collect::<HashSet<_>>().len()
}

/// Voxel-grid downsample to roughly `target_n` points.
///
/// The voxel size is searched geometrically until the voxel count lands in
/// `[0.9, 1.1] × target_n`; each occupied voxel keeps the original point
/// nearest its centroid. Kept points stay in input order.
pub fn downsample(cloud: &PointCloud, target_n: usize) -> PointCloud {
    let target_n = target_n.max(1);
    if cloud.len() <= target_n {
        return cloud.clone();
    }
    let (lo_pt, hi_pt) = cloud.bounds().expect("non-empty");
    let diag = (hi_pt - lo_pt).norm().max(1e-12);
    let (lo_band, hi_band) = (0.9 * target_n as f64, 1.1 * target_n as f64);

    let (mut lo, mut hi) = (diag * 1e-7, diag * 2.0);
    let mut best = (usize::MAX, hi);
    for _ in 0..80 {
        let mid = (lo * hi).sqrt();
        let count = voxel_count(&cloud.points, &lo_pt, mid);
        let err = count.abs_diff(target_n);
        if err < best.0 {
            best = (err, mid);
        }
        if (count as f64) >= lo_band && (count as f64) <= hi_band {
            break;
        }
        if count as f64 > hi_band {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-12 {
            break;
        }
    }
    let size = best.1;

    let mut voxels: HashMap<VoxelKey, Vec<usize>> = HashMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        voxels.entry(voxel_key(p, &lo_pt, size)).or_default().push(i);
    }
    let mut kept: Vec<usize> = voxels
        .values()
        .map(|members| {
            let c = members.iter().fold(nalgebra::Vector3::zeros(), |a, &i| a + cloud.points[i].coords) / members.len() as f64;
            // members are ascending, so min_by keeps the lowest index on ties
            *members
                .iter()
                .min_by(|&&a, &&b| {
                    let da = (cloud.points[a].coords - c).norm_squared();
                    let db = (cloud.points[b].coords - c).norm_squared();
                    da.total_cmp(&db)
                })
                .unwrap()
        })
        .collect();
    kept.sort_unstable();
    cloud.subset(&kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Grid, Intrinsics, RgbImage};
    use nalgebra::Matrix4;

    fn plane_view(w: usize, h: usize, z: f64) -> CameraView {
        CameraView::new(
            Intrinsics::from_focal(10.0, 10.0, 1.5, 1.5).unwrap(),
            Matrix4::identity(),
            RgbImage::new(w, h),
            Grid::filled(w, h, z),
            Grid::filled(w, h, true),
            None,
        )
        .unwrap()
    }

    fn cloud_of(points: Vec<Point3>) -> PointCloud {
        let n = points.len();
        PointCloud { points, source_view: vec![0; n], source_pixel: (0..n as u32).collect(), link_id: vec![None; n] }
    }

    #[test]
    fn principal_ray() {
        let mut v = plane_view(3, 3, 1.0);
        v.intrinsics = Intrinsics::from_focal(10.0, 10.0, 1.0, 1.0).unwrap();
        let mut mask = Grid::filled(3, 3, false);
        mask.set(1, 1, true);
        v.fg_mask = mask;
        let c = backproject_view(&v);
        assert_eq!(c.len(), 1);
        assert!((c.points[0] - Point3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn plane_at_two_metres() {
        let c = backproject_view(&plane_view(4, 4, 2.0));
        assert_eq!(c.len(), 16);
        assert!(c.points.iter().all(|p| p.z == 2.0));
    }

    #[test]
    fn empty_foreground_is_not_fatal() {
        let mut v = plane_view(4, 4, 2.0);
        v.fg_mask = Grid::filled(4, 4, false);
        assert!(backproject_view(&v).is_empty());
    }

    #[test]
    fn aggregate_single_view_is_backprojection() {
        let v = plane_view(4, 4, 2.0);
        assert_eq!(aggregate_scene(std::slice::from_ref(&v)).unwrap(), backproject_view(&v));
    }

    #[test]
    fn aggregate_rejects_size_mismatch() {
        assert!(aggregate_scene(&[plane_view(4, 4, 1.0), plane_view(3, 4, 1.0)]).is_err());
        assert!(aggregate_scene(&[]).is_err());
    }

    #[test]
    fn downsample_passthrough() {
        let pts: Vec<Point3> = (0..100).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let c = cloud_of(pts);
        assert_eq!(downsample(&c, 100), c);
        assert_eq!(downsample(&c, 500), c);
    }

    #[test]
    fn downsample_uniform_grid() {
        let pts: Vec<Point3> = (0..10_000).map(|i| Point3::new((i % 100) as f64 * 0.01, (i / 100) as f64 * 0.01, 0.0)).collect();
        let c = cloud_of(pts.clone());
        let d = downsample(&c, 1000);
        assert!((900..=1100).contains(&d.len()), "{}", d.len());
        for p in &d.points {
            assert!(pts.contains(p));
        }
        // nearest-kept-neighbour distances by brute force
        let nn: Vec<f64> = d
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| d.points.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, q)| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .collect();
        let mean = nn.iter().sum::<f64>() / nn.len() as f64;
        let var = nn.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nn.len() as f64;
        assert!(var.sqrt() / mean < 0.5, "cv {}", var.sqrt() / mean);
        assert_eq!(downsample(&c, 1000), d);
    }

    #[test]
    fn downsample_keeps_both_blobs() {
        let mut pts = Vec::new();
        for i in 0..2000 {
            let t = i as f64 * 0.37;
            let off = if i % 4 == 0 { 10.0 } else { 0.0 };
            pts.push(Point3::new(off + t.sin() * 0.5, t.cos() * 0.5, (t * 0.13).sin() * 0.5));
        }
        let d = downsample(&cloud_of(pts), 100);
        let far = d.points.iter().filter(|p| p.x > 5.0).count();
        let near = d.len() - far;
        assert!(far >= 20 && near >= 20, "far {far} near {near}");
    }
}
