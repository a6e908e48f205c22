//! Dynamic chunking attention.
//!
//! A [`ChunkPartition`] splits a frame sequence into contiguous chunks. The
//! induced frame mask lets frame `i` see frame `j` iff `ch(j) <= ch(i)`:
//! bidirectional inside a chunk, causal across chunks. Offline, streaming
//! and chunked inference are the same computation under different
//! partitions, and chunkwise execution with a [`KvCache`] reproduces the
//! single masked pass.

mod cache;
mod kernel;
mod modes;
mod partition;
pub mod verify;

pub use cache::{attend_streaming, ChunkInput, KvCache, LayerCache};
pub use kernel::{
    affine, attend_full, attention_kernel, attention_kernel_backward, AttentionProbs,
    AttentionWeights, KeyMask,
};
pub use modes::{run_masked, run_mode, run_partition, InferenceMode, ModeRun};
pub use partition::{build_mask, expand_mask, ChunkPartition, Mask};
