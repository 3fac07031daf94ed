use super::camera::CameraView;
use super::cloud::PointCloud;
use super::grid::{FeatureMap, Grid};
use super::kdtree::SpatialIndex;
use crate::{par, Error, Result};

/// Per-point values splatted into a view.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub values: Grid<f64>,
    pub coverage: Grid<bool>,
}

/// Splats per-point values into `view`. When several points land on a pixel the
/// one nearest the camera wins; equal depths keep the lower point index.
pub fn project_points(cloud: &PointCloud, view: &CameraView, values: &[f64]) -> Result<Projection> {
    if values.len() != cloud.len() {
        return Err(Error::shape(format!("{} values for {} points", values.len(), cloud.len())));
    }
    let (w, h) = (view.width(), view.height());
    let mut zbuf = Grid::filled(w, h, f64::INFINITY);
    let mut out = Grid::filled(w, h, 0.0);
    let mut coverage = Grid::filled(w, h, false);
    for (p, &v) in cloud.points.iter().zip(values) {
        if let Some((row, col, z)) = view.project_to_pixel(p) {
            let i = zbuf.idx(row, col);
            if z < zbuf.data[i] {
                zbuf.data[i] = z;
                out.data[i] = v;
                coverage.data[i] = true;
            }
        }
    }
    Ok(Projection { values: out, coverage })
}

/// Index of the nearest cloud point for every foreground pixel's backprojection.
pub fn nn_index_map(view: &CameraView, index: &SpatialIndex) -> Result<Grid<Option<u32>>> {
    if index.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (w, h) = (view.width(), view.height());
    let mut out = Grid::filled(w, h, None);
    par::for_each_chunk_mut(&mut out.data, w, |row, line| {
        for (col, slot) in line.iter_mut().enumerate() {
            if *view.fg_mask.get(row, col) {
                let p = view.backproject_pixel(row, col);
                *slot = index.nearest_point(&p).map(|(i, _)| i as u32);
            }
        }
    });
    Ok(out)
}

/// Carries per-point values to foreground pixels through the nearest cloud
/// point; background pixels get `T::default()`.
pub fn label_pixels_by_nn<T>(view: &CameraView, cloud: &PointCloud, per_point_values: &[T], index: &SpatialIndex) -> Result<Grid<T>>
where
    T: Copy + Default,
{
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if per_point_values.len() != cloud.len() || index.len() != cloud.len() {
        return Err(Error::shape("values, cloud and index sizes differ"));
    }
    let nn = nn_index_map(view, index)?;
    Ok(nn.map(|i| i.map_or_else(T::default, |i| per_point_values[i as usize])))
}

/// Corner-aligned bilinear resize of a feature grid.
pub fn bilinear_upsample(grid: &FeatureMap, out_h: usize, out_w: usize) -> FeatureMap {
    let (h, w, d) = (grid.height, grid.width, grid.dim);
    let scale = |out: usize, inp: usize| if out > 1 { (inp - 1) as f64 / (out - 1) as f64 } else { 0.0 };
    let (sy, sx) = (scale(out_h, h), scale(out_w, w));
    let mut out = FeatureMap::zeros(out_w, out_h, d);
    par::for_each_chunk_mut(&mut out.data, out_w * d, |row, line| {
        let fy = row as f64 * sy;
        let y0 = (fy.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for col in 0..out_w {
            let fx = col as f64 * sx;
            let x0 = (fx.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let (a, b, c, e) = (grid.pixel(y0, x0), grid.pixel(y0, x1), grid.pixel(y1, x0), grid.pixel(y1, x1));
            let dst = &mut line[col * d..(col + 1) * d];
            for k in 0..d {
                let top = a[k] as f64 * (1.0 - tx) + b[k] as f64 * tx;
                let bot = c[k] as f64 * (1.0 - tx) + e[k] as f64 * tx;
                dst[k] = (top * (1.0 - ty) + bot * ty) as f32;
            }
        }
    });
    out
}
