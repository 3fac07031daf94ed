use std::path::PathBuf;

use crate::io::tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("camera intrinsics are not invertible")]
    SingularIntrinsics,

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("region {0} has no member points")]
    EmptyRegion(u32),

    #[error("reference feature norm {0:e} is too small for cosine similarity")]
    DegenerateReference(f64),

    #[error("VLM request failed after {attempts} attempts: {message}")]
    Vlm { attempts: u32, message: String },

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
