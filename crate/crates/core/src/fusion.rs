//! Multi-view feature fusion onto the aggregated object point cloud.

use crate::geom::{CameraView, FeatureMap, Point3, PointCloud};
use crate::{par, Error, Result};

/// Default depth-consistency tolerance for visibility, in metres.
pub const DEFAULT_VISIBILITY_TOLERANCE: f64 = 0.005;

/// Dense per-pixel features for one view, at image resolution.
pub type ViewFeatures = FeatureMap;

/// Per-point fused features. Rows with `visible_count == 0` are invalid and
/// hold zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField {
    /// Row-major `N × dim`.
    pub features: Vec<f64>,
    pub visible_count: Vec<u32>,
    pub dim: usize,
}

impl FeatureField {
    pub fn new(features: Vec<f64>, visible_count: Vec<u32>, dim: usize) -> Result<Self> {
        if dim == 0 || features.len() != visible_count.len() * dim {
            return Err(Error::shape(format!("{} feature values for {} points of dim {dim}", features.len(), visible_count.len())));
        }
        Ok(FeatureField { features, visible_count, dim })
    }

    pub fn len(&self) -> usize {
        self.visible_count.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visible_count.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn is_valid(&self, i: usize) -> bool {
        self.visible_count[i] > 0
    }

    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_valid(i)).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> FeatureField {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        FeatureField { features, visible_count: indices.iter().map(|&i| self.visible_count[i]).collect(), dim: self.dim }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Visibility {
    pub visible: bool,
    /// `(row, col)` of the nearest pixel when the point projects into the image.
    pub pixel: Option<(usize, usize)>,
}

/// A point is visible when it projects inside the image onto a valid depth
/// reading that agrees with its own camera depth to within `tolerance`.
pub fn visibility_test(point: &Point3, view: &CameraView, tolerance: f64) -> Visibility {
    match view.project_to_pixel(point) {
        None => Visibility { visible: false, pixel: None },
        Some((row, col, z)) => {
            let d = *view.depth.get(row, col);
            let visible = d > 0.0 && (z - d).abs() <= tolerance;
            Visibility { visible, pixel: Some((row, col)) }
        }
    }
}

/// Averages, per point, the nearest-pixel features of every view the point is
/// visible in. Views are summed in ascending index order.
pub fn fuse_features(cloud: &PointCloud, views: &[CameraView], feats: &[ViewFeatures], tolerance: f64) -> Result<FeatureField> {
    if views.is_empty() || views.len() != feats.len() {
        return Err(Error::shape(format!("{} views but {} feature maps", views.len(), feats.len())));
    }
    if !(tolerance > 0.0) {
        return Err(Error::invalid("visibility tolerance must be positive"));
    }
    let dim = feats[0].dim;
    for (v, f) in views.iter().zip(feats) {
        if f.dim != dim {
            return Err(Error::shape(format!("feature dim {} differs from {dim}", f.dim)));
        }
        if f.width != v.width() || f.height != v.height() {
            return Err(Error::shape("feature map size differs from its view"));
        }
    }
    let rows = par::map_range(cloud.len(), |n| {
        let p = &cloud.points[n];
        let mut acc = vec![0.0f64; dim];
        let mut count = 0u32;
        for (view, fmap) in views.iter().zip(feats) {
            let vis = visibility_test(p, view, tolerance);
            if let (true, Some((row, col))) = (vis.visible, vis.pixel) {
                for (a, &x) in acc.iter_mut().zip(fmap.pixel(row, col)) {
                    *a += x as f64;
                }
                count += 1;
            }
        }
        if count > 0 {
            let k = count as f64;
            acc.iter_mut().for_each(|a| *a /= k);
        }
        (acc, count)
    });
    let mut features = Vec::with_capacity(cloud.len() * dim);
    let mut visible_count = Vec::with_capacity(cloud.len());
    for (row, c) in rows {
        features.extend(row);
        visible_count.push(c);
    }
    Ok(FeatureField { features, visible_count, dim })
}
