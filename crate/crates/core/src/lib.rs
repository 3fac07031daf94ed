//! Unsupervised affordance annotation and task-conditioned affordance prediction.
//!
//! The crate is organised as a pipeline over rendered RGB-D views of an object:
//!
//! - [`geom`]: camera geometry, point clouds, nearest-neighbour lookup and raster helpers
//! - [`fusion`]: multi-view fusion of dense per-pixel features into a per-point feature field
//! - [`regions`]: PCA reduction and mean-shift / k-means region proposal
//! - [`annotate`]: VLM-driven instruction proposal and continuous affordance maps
//! - [`decoder`]: the FiLM-conditioned 1×1-conv decoder, its gradients and training loop
//! - [`metrics`]: AUC, KLD, SIM, NSS and batch evaluation reports
//! - [`io`]: tensor files, manifests, observation packing and PNG export
//! - [`pipeline`]: file-level stages tying the modules together
//! - [`synth`]: deterministic synthetic scenes with analytic ground truth
//!
//! Data-parallel loops go through [`par`], which uses rayon when the `parallel`
//! feature is enabled (the default) and plain iterators otherwise.

// `!(x > 0.0)` is used on purpose: it also rejects NaN. Index loops mirror
// the formulas in the numeric kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod annotate;
pub mod decoder;
mod error;
pub mod fusion;
pub mod geom;
pub mod io;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod regions;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
