use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};

use super::grid::{Grid, RgbImage};
use super::{Point3, Vec3};
use crate::{Error, Result};

/// Pinhole intrinsics with a cached inverse. Pixel centres sit on integer
/// coordinates: column `u`, row `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub k: Matrix3<f64>,
    k_inv: Matrix3<f64>,
}

impl Intrinsics {
    pub fn new(k: Matrix3<f64>, allow_skew: bool) -> Result<Self> {
        let k_inv = k.try_inverse().filter(|m| m.iter().all(|x| x.is_finite()));
        let k_inv = match k_inv {
            Some(inv) if k.determinant().abs() > 1e-12 => inv,
            _ => return Err(Error::SingularIntrinsics),
        };
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(Error::invalid("intrinsics must be upper triangular with K[2,2] = 1"));
        }
        if !allow_skew && k[(0, 1)] != 0.0 {
            return Err(Error::invalid("non-zero skew"));
        }
        Ok(Intrinsics { k, k_inv })
    }

    pub fn from_focal(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        Self::new(Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0), false)
    }

    pub fn inverse(&self) -> &Matrix3<f64> {
        &self.k_inv
    }

    /// Camera-frame point for pixel `(u, v)` at depth `z`.
    #[inline]
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vec3 {
        self.k_inv * Vector3::new(u, v, 1.0) * z
    }

    /// Sub-pixel `(u, v)` of a camera-frame point; `None` when `z <= 0`.
    #[inline]
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        let h = self.k * p;
        Some((h.x / h.z, h.y / h.z))
    }
}

/// One rendered RGB-D view of the object.
#[derive(Debug, Clone)]
pub struct CameraView {
    pub intrinsics: Intrinsics,
    /// Camera-to-world rigid transform.
    pub extrinsics: Matrix4<f64>,
    pub rgb: RgbImage,
    /// Metres along the optical axis; 0 marks invalid pixels.
    pub depth: Grid<f64>,
    pub fg_mask: Grid<bool>,
    /// Per-pixel articulation link, when the renderer provides one.
    pub link_map: Option<Grid<u32>>,
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl CameraView {
    pub fn new(
        intrinsics: Intrinsics,
        extrinsics: Matrix4<f64>,
        rgb: RgbImage,
        depth: Grid<f64>,
        fg_mask: Grid<bool>,
        link_map: Option<Grid<u32>>,
    ) -> Result<Self> {
        let (w, h) = (depth.width, depth.height);
        if !fg_mask.same_shape(&depth) || rgb.width != w || rgb.height != h {
            return Err(Error::shape("rgb, depth and mask sizes differ"));
        }
        if let Some(l) = &link_map {
            if !l.same_shape(&depth) {
                return Err(Error::shape("link map size differs from depth"));
            }
        }
        let rotation: Matrix3<f64> = extrinsics.fixed_view::<3, 3>(0, 0).into();
        let ortho = rotation * rotation.transpose() - Matrix3::identity();
        if ortho.amax() > 1e-6 || (rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("extrinsic rotation is not orthonormal"));
        }
        let bottom = extrinsics.fixed_view::<1, 4>(3, 0);
        if bottom[0] != 0.0 || bottom[1] != 0.0 || bottom[2] != 0.0 || bottom[3] != 1.0 {
            return Err(Error::invalid("extrinsics bottom row must be [0 0 0 1]"));
        }
        for (d, &m) in depth.data.iter().zip(&fg_mask.data) {
            if !(d.is_finite() && *d >= 0.0) {
                return Err(Error::invalid("depth must be finite and non-negative"));
            }
            if m && *d <= 0.0 {
                return Err(Error::invalid("foreground pixel without valid depth"));
            }
        }
        let translation = Vec3::new(extrinsics[(0, 3)], extrinsics[(1, 3)], extrinsics[(2, 3)]);
        Ok(CameraView { intrinsics, extrinsics, rgb, depth, fg_mask, link_map, rotation, translation })
    }

    pub fn width(&self) -> usize {
        self.depth.width
    }

    pub fn height(&self) -> usize {
        self.depth.height
    }

    pub fn to_world(&self, p_cam: &Vec3) -> Point3 {
        Point3::from(self.rotation * p_cam + self.translation)
    }

    pub fn to_camera(&self, p_world: &Point3) -> Vec3 {
        self.rotation.transpose() * (p_world.coords - self.translation)
    }

    /// World point seen at pixel `(row, col)` with the stored depth.
    pub fn backproject_pixel(&self, row: usize, col: usize) -> Point3 {
        let z = *self.depth.get(row, col);
        self.to_world(&self.intrinsics.unproject(col as f64, row as f64, z))
    }

    /// Nearest pixel `(row, col)` and camera depth of a world point, if it
    /// lands inside the image in front of the camera.
    pub fn project_to_pixel(&self, p_world: &Point3) -> Option<(usize, usize, f64)> {
        let pc = self.to_camera(p_world);
        let (u, v) = self.intrinsics.project(&pc)?;
        let (col, row) = (u.round(), v.round());
        if col < 0.0 || row < 0.0 || col >= self.width() as f64 || row >= self.height() as f64 {
            return None;
        }
        Some((row as usize, col as usize, pc.z))
    }

    pub fn camera_center(&self) -> Point3 {
        Point3::from(self.translation)
    }
}

/// Camera-to-world transform for a camera at `eye` looking at `target`, with
/// x right, y down and z forward in the camera frame.
pub fn look_at(eye: Point3, target: Point3, up: Vec3) -> Result<Matrix4<f64>> {
    let forward = (target - eye).try_normalize(1e-12).ok_or_else(|| Error::invalid("eye equals target"))?;
    let right = forward.cross(&up).try_normalize(1e-9).ok_or_else(|| Error::invalid("up is parallel to view direction"))?;
    let down = forward.cross(&right);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[right, down, forward]));
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(rot.matrix());
    m[(0, 3)] = eye.x;
    m[(1, 3)] = eye.y;
    m[(2, 3)] = eye.z;
    Ok(m)
}
