//! Video geometry toolkit built around dynamic chunking attention.
//!
//! * [`attention`]: chunk partitions, the chunk attention mask, multi-head
//!   attention with a KV cache, and offline / streaming / chunked drivers.
//! * [`model`]: a small ViT-style network predicting point maps, depth and
//!   normals per frame, with reverse-mode gradients via [`autograd`].
//! * [`losses`]: scale-aligned point loss, angular normal losses and the
//!   AdamW training driver.
//! * [`geometry`]: pinhole camera, normals from point maps, synthetic scenes.
//! * [`refine`]: outlier filtering, screened Poisson priors, median-log
//!   normalization and completion teachers for pseudo-label refinement.
//! * [`metrics`]: depth, point-map and normal evaluation metrics.
//! * [`io`]: the `VGEO` tensor container, checkpoints and sequence folders.
//! * [`bench`]: per-frame cost and cache occupancy of the inference modes.
//! * [`cli`]: the `vidgeo` command line.

// `!(x > 0.0)` is deliberate throughout: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use std::sync::atomic::{AtomicBool, Ordering};

pub mod attention;
pub mod autograd;
pub mod bench;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod refine;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor, Tensor64};

static DETERMINISTIC: AtomicBool = AtomicBool::new(true);

/// When set (the default), per-frame stages run on the calling thread in
/// frame order. When cleared they may spread over a thread pool; results
/// are collected in frame order, so outputs do not change.
pub fn deterministic() -> bool {
    DETERMINISTIC.load(Ordering::Relaxed)
}

pub fn set_deterministic(on: bool) {
    DETERMINISTIC.store(on, Ordering::Relaxed);
}
