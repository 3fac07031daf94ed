use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::{Point3, Vec3};
use crate::{Error, Result};

/// Primitive solid in its local frame. Cylinders run along local z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Box { half_extents: [f64; 3] },
    Cylinder { radius: f64, half_height: f64 },
    Sphere { radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub translation: [f64; 3],
    /// Rotation vector (axis × angle, radians).
    #[serde(default)]
    pub rotation: [f64; 3],
}

impl Pose {
    pub fn at(x: f64, y: f64, z: f64) -> Self {
        Pose { translation: [x, y, z], rotation: [0.0; 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub pose: Pose,
}

impl Primitive {
    pub fn validate(&self) -> Result<()> {
        let ok = match &self.shape {
            Shape::Box { half_extents } => half_extents.iter().all(|&e| e > 0.0 && e.is_finite()),
            Shape::Cylinder { radius, half_height } => *radius > 0.0 && *half_height > 0.0,
            Shape::Sphere { radius } => *radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("degenerate primitive {:?}", self.shape)))
        }
    }

    fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_scaled_axis(Vector3::from(self.pose.rotation))
    }

    fn to_local(&self, origin: &Point3, dir: &Vec3) -> (Vec3, Vec3) {
        let r = self.rotation();
        let t = Vector3::from(self.pose.translation);
        (r.inverse() * (origin.coords - t), r.inverse() * dir)
    }

    /// Smallest positive ray parameter of an intersection with the surface.
    pub fn intersect(&self, origin: &Point3, dir: &Vec3) -> Option<f64> {
        let (o, d) = self.to_local(origin, dir);
        let best = |ts: &[f64]| ts.iter().copied().filter(|&t| t > 1e-12).fold(None, |b: Option<f64>, t| Some(b.map_or(t, |b| b.min(t))));
        match &self.shape {
            Shape::Box { half_extents: a } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for k in 0..3 {
                    if d[k].abs() < 1e-300 {
                        if o[k].abs() > a[k] {
                            return None;
                        }
                        continue;
                    }
                    let (ta, tb) = ((-a[k] - o[k]) / d[k], (a[k] - o[k]) / d[k]);
                    t0 = t0.max(ta.min(tb));
                    t1 = t1.min(ta.max(tb));
                }
                if t0 > t1 {
                    return None;
                }
                best(&[t0, t1])
            }
            Shape::Sphere { radius } => {
                let (a, b, c) = (d.dot(&d), 2.0 * o.dot(&d), o.dot(&o) - radius * radius);
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                best(&[(-b - s) / (2.0 * a), (-b + s) / (2.0 * a)])
            }
            Shape::Cylinder { radius, half_height } => {
                let mut hits = Vec::with_capacity(4);
                let a = d.x * d.x + d.y * d.y;
                if a > 1e-300 {
                    let b = 2.0 * (o.x * d.x + o.y * d.y);
                    let c = o.x * o.x + o.y * o.y - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if disc >= 0.0 {
                        let s = disc.sqrt();
                        for t in [(-b - s) / (2.0 * a), (-b + s) / (2.0 * a)] {
                            if (o.z + t * d.z).abs() <= *half_height {
                                hits.push(t);
                            }
                        }
                    }
                }
                if d.z.abs() > 1e-300 {
                    for zc in [-half_height, *half_height] {
                        let t = (zc - o.z) / d.z;
                        let (x, y) = (o.x + t * d.x, o.y + t * d.y);
                        if x * x + y * y <= radius * radius {
                            hits.push(t);
                        }
                    }
                }
                best(&hits)
            }
        }
    }

    /// Distance from a world point to the primitive's surface.
    pub fn surface_distance(&self, p: &Point3) -> f64 {
        let (q, _) = self.to_local(p, &Vec3::zeros());
        match &self.shape {
            Shape::Sphere { radius } => (q.norm() - radius).abs(),
            Shape::Box { half_extents: a } => {
                let d = Vector3::new(q.x.abs() - a[0], q.y.abs() - a[1], q.z.abs() - a[2]);
                let outside = Vector3::new(d.x.max(0.0), d.y.max(0.0), d.z.max(0.0)).norm();
                (outside + d.x.max(d.y).max(d.z).min(0.0)).abs()
            }
            Shape::Cylinder { radius, half_height } => {
                let dr = (q.x * q.x + q.y * q.y).sqrt() - radius;
                let dz = q.z.abs() - half_height;
                let outside = (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt();
                (outside + dr.max(dz).min(0.0)).abs()
            }
        }
    }
}
