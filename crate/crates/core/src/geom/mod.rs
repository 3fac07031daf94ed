//! Camera geometry, point clouds, nearest-neighbour lookup and image-space helpers.

mod camera;
mod cloud;
mod grid;
mod kdtree;
mod raster;

pub use camera::{look_at, CameraView, Intrinsics};
pub use cloud::{aggregate_scene, backproject_view, downsample, PointCloud, DEFAULT_TARGET_POINTS};
pub use grid::{FeatureMap, Grid, RgbImage};
pub use kdtree::SpatialIndex;
pub use raster::{bilinear_upsample, label_pixels_by_nn, nn_index_map, project_points, Projection};

pub type Point3 = nalgebra::Point3<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
