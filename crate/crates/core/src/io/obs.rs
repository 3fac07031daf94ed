//! Per-view observation stacks for a downstream policy: affordance, depth,
//! world xyz and pixel-location channels, normalised and clipped to a
//! workspace box.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bundle::Bundle;
use super::tensor::Tensor;
use crate::geom::{CameraView, Grid};
use crate::{seed, Error, Result};

/// Channel order of every [`ViewObservation`].
pub const CHANNELS: [&str; 7] = ["affordance", "depth", "x", "y", "z", "row", "col"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl WorkspaceBounds {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        let b = WorkspaceBounds { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.min[a] < self.max[a]) {
                return Err(Error::invalid(format!("workspace axis {a}: min {} is not below max {}", self.min[a], self.max[a])));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn clip(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| p[a].clamp(self.min[a], self.max[a]))
    }
}

/// Channel-major `C × H × W` stack, channels in [`CHANNELS`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewObservation {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ViewObservation {
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.height + row) * self.width + col]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPack {
    pub views: Vec<ViewObservation>,
    pub proprio: Vec<f64>,
    pub bounds: WorkspaceBounds,
}

fn unit_coord(i: usize, n: usize) -> f64 {
    if n > 1 {
        2.0 * i as f64 / (n - 1) as f64 - 1.0
    } else {
        0.0
    }
}

/// Builds one stack per view.
///
/// - affordance `a ∈ [0,1]` becomes `2a − 1`;
/// - pixels without depth, or whose world point falls outside `bounds`, get depth 0;
/// - xyz is the back-projected world point clipped to `bounds` (pixels
///   without depth use the clipped origin);
/// - row/col are the pixel indices scaled to [−1, 1].
pub fn pack_observation(views: &[CameraView], maps: &[Grid<f64>], bounds: WorkspaceBounds, proprio: &[f64]) -> Result<ObservationPack> {
    bounds.validate()?;
    if views.len() != maps.len() {
        return Err(Error::shape(format!("{} views but {} affordance maps", views.len(), maps.len())));
    }
    let mut out = Vec::with_capacity(views.len());
    for (v, m) in views.iter().zip(maps) {
        let (w, h) = (v.width(), v.height());
        if m.width != w || m.height != h {
            return Err(Error::shape(format!("affordance map {}×{} for a {}×{} view", m.height, m.width, h, w)));
        }
        let n = w * h;
        let mut data = vec![0.0; CHANNELS.len() * n];
        for row in 0..h {
            for col in 0..w {
                let i = row * w + col;
                data[i] = 2.0 * m.get(row, col).clamp(0.0, 1.0) - 1.0;
                let z = *v.depth.get(row, col);
                let (xyz, depth) = if z > 0.0 {
                    let p = v.backproject_pixel(row, col);
                    let p = [p.x, p.y, p.z];
                    (bounds.clip(p), if bounds.contains(p) { z } else { 0.0 })
                } else {
                    (bounds.clip([0.0; 3]), 0.0)
                };
                data[n + i] = depth;
                for a in 0..3 {
                    data[(2 + a) * n + i] = xyz[a];
                }
                data[5 * n + i] = unit_coord(row, h);
                data[6 * n + i] = unit_coord(col, w);
            }
        }
        out.push(ViewObservation { width: w, height: h, data });
    }
    Ok(ObservationPack { views: out, proprio: proprio.to_vec(), bounds })
}

/// Crops every view to `round(crop·H) × round(crop·W)` at a seeded random
/// offset, one window per view shared by all its channels.
pub fn random_crop_augment(pack: &ObservationPack, crop: f64, seed_: u64) -> Result<ObservationPack> {
    if !(crop > 0.0 && crop <= 1.0) {
        return Err(Error::invalid(format!("crop fraction {crop} outside (0, 1]")));
    }
    let mut rng = seed::rng(seed_, "obs/crop");
    let views = pack
        .views
        .iter()
        .map(|v| {
            let ch = ((crop * v.height as f64).round() as usize).clamp(1, v.height);
            let cw = ((crop * v.width as f64).round() as usize).clamp(1, v.width);
            let r0 = rng.gen_range(0..=v.height - ch);
            let c0 = rng.gen_range(0..=v.width - cw);
            let mut data = Vec::with_capacity(CHANNELS.len() * ch * cw);
            for c in 0..CHANNELS.len() {
                for r in r0..r0 + ch {
                    for col in c0..c0 + cw {
                        data.push(v.get(c, r, col));
                    }
                }
            }
            ViewObservation { width: cw, height: ch, data }
        })
        .collect();
    Ok(ObservationPack { views, proprio: pack.proprio.clone(), bounds: pack.bounds })
}

impl ObservationPack {
    pub fn to_bundle(&self) -> Result<Bundle> {
        let mut b = Bundle::new(serde_json::json!({
            "kind": "observation",
            "channels": CHANNELS,
            "bounds": self.bounds,
            "views": self.views.len(),
        }));
        for (i, v) in self.views.iter().enumerate() {
            b.push(format!("view{i}"), Tensor::f64(&[CHANNELS.len(), v.height, v.width], v.data.clone())?);
        }
        b.push("proprio", Tensor::f64(&[self.proprio.len()], self.proprio.clone())?);
        Ok(b)
    }

    pub fn from_bundle(b: &Bundle) -> Result<Self> {
        let bounds: WorkspaceBounds = serde_json::from_value(b.meta["bounds"].clone())?;
        let n = b.meta["views"].as_u64().ok_or_else(|| Error::invalid("observation bundle lacks a view count"))? as usize;
        let mut views = Vec::with_capacity(n);
        for i in 0..n {
            let t = b.get(&format!("view{i}"))?;
            match t.shape()[..] {
                [c, h, w] if c == CHANNELS.len() => views.push(ViewObservation { width: w, height: h, data: t.to_f64() }),
                _ => return Err(Error::shape(format!("view{i}: unexpected shape {:?}", t.shape()))),
            }
        }
        Ok(ObservationPack { views, proprio: b.get("proprio")?.to_f64(), bounds })
    }
}
