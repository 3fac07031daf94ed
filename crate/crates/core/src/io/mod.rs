//! File formats, manifests, observation packing and figure export.

pub mod bundle;
pub mod manifest;
pub mod obs;
pub mod png;
pub mod tensor;

pub use bundle::Bundle;
pub use manifest::{Scene, SceneManifest, ViewEntry};
pub use tensor::{read_tensor, write_tensor, Tensor, TensorData, TensorError};
