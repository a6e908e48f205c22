use std::fmt;
use std::str::FromStr;

use super::cache::{attend_streaming, ChunkInput, KvCache};
use super::kernel::{attend_full, AttentionWeights};
use super::partition::{build_mask, expand_mask, ChunkPartition};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// The three inference modes. Each one is just a choice of chunk partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InferenceMode {
    Offline,
    Streaming,
    Chunked(usize),
}

impl InferenceMode {
    pub fn partition(self, frames: usize) -> Result<ChunkPartition> {
        match self {
            InferenceMode::Offline => ChunkPartition::full(frames),
            InferenceMode::Streaming => ChunkPartition::streaming(frames),
            InferenceMode::Chunked(c) => ChunkPartition::chunked(frames, c),
        }
    }
}

impl fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InferenceMode::Offline => write!(f, "offline"),
            InferenceMode::Streaming => write!(f, "streaming"),
            InferenceMode::Chunked(c) => write!(f, "chunked({c})"),
        }
    }
}

impl FromStr for InferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offline" => Ok(InferenceMode::Offline),
            "streaming" => Ok(InferenceMode::Streaming),
            _ => s
                .strip_prefix("chunked(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|c| c.parse().ok())
                .filter(|&c: &usize| c >= 1)
                .map(InferenceMode::Chunked)
                .ok_or_else(|| Error::Parse(format!("unknown inference mode {s:?}"))),
        }
    }
}

/// Output of a chunkwise run together with the cache's peak occupancy.
#[derive(Clone, Debug)]
pub struct ModeRun<T = f32> {
    pub outputs: Tensor<T>,
    pub peak_cache_frames: usize,
}

/// Runs a residual stack of attention layers (`x ← x + attn(x)`) over
/// `tokens` chunk by chunk, with one KV cache per layer.
pub fn run_partition<T: Real>(
    layers: &[AttentionWeights<T>],
    tokens: &Tensor<T>,
    tokens_per_frame: usize,
    partition: &ChunkPartition,
    window: Option<usize>,
) -> Result<ModeRun<T>> {
    let dim = check_stack(layers, tokens, tokens_per_frame, partition)?;
    let mut cache = KvCache::new(layers.len(), dim, tokens_per_frame, window)?;
    let mut parts = Vec::with_capacity(partition.num_chunks());
    for r in partition.ranges() {
        let mut x = tokens.slice_rows(r.start * tokens_per_frame, r.end * tokens_per_frame);
        for (l, w) in layers.iter().enumerate() {
            let chunk = ChunkInput {
                start_frame: r.start,
                tokens: &x,
            };
            let y = attend_streaming(chunk, w, cache.layer_mut(l))?;
            x.add_assign(&y)?;
        }
        parts.push(x);
    }
    let refs: Vec<&Tensor<T>> = parts.iter().collect();
    Ok(ModeRun {
        outputs: Tensor::concat_rows(&refs)?,
        peak_cache_frames: cache.peak_frames(),
    })
}

/// [`run_partition`] with the partition implied by `mode`.
pub fn run_mode<T: Real>(
    layers: &[AttentionWeights<T>],
    tokens: &Tensor<T>,
    tokens_per_frame: usize,
    mode: InferenceMode,
    window: Option<usize>,
) -> Result<ModeRun<T>> {
    let frames = tokens.dims().first().copied().unwrap_or(0) / tokens_per_frame.max(1);
    if frames == 0 {
        return Err(Error::Empty("no frames to run".into()));
    }
    run_partition(layers, tokens, tokens_per_frame, &mode.partition(frames)?, window)
}

/// The same residual stack evaluated in one pass over all tokens under the
/// expanded chunk mask. Reference for [`run_partition`].
pub fn run_masked<T: Real>(
    layers: &[AttentionWeights<T>],
    tokens: &Tensor<T>,
    tokens_per_frame: usize,
    partition: &ChunkPartition,
) -> Result<Tensor<T>> {
    check_stack(layers, tokens, tokens_per_frame, partition)?;
    let mask = expand_mask(&build_mask(partition), tokens_per_frame)?;
    let mut x = tokens.clone();
    for w in layers {
        let y = attend_full(&x, w, &mask)?;
        x.add_assign(&y)?;
    }
    Ok(x)
}

fn check_stack<T: Real>(
    layers: &[AttentionWeights<T>],
    tokens: &Tensor<T>,
    tokens_per_frame: usize,
    partition: &ChunkPartition,
) -> Result<usize> {
    let (rows, dim) = tokens.matrix_dims()?;
    if tokens_per_frame == 0 || rows != partition.num_frames() * tokens_per_frame {
        return Err(Error::shape(format!(
            "{rows} token rows for {} frames of {tokens_per_frame} tokens",
            partition.num_frames()
        )));
    }
    if let Some(w) = layers.iter().find(|w| w.dim() != dim) {
        return Err(Error::shape(format!(
            "layer width {} for tokens of width {dim}",
            w.dim()
        )));
    }
    Ok(dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::partition::Mask;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stack(n: usize, tpf: usize, seed: u64) -> (Vec<AttentionWeights>, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..2)
            .map(|_| AttentionWeights::random(16, 4, &mut rng).unwrap())
            .collect();
        let x = Tensor::from_fn([n * tpf, 16], |_| rng.gen_range(-1.0f32..1.0));
        (layers, x)
    }

    #[test]
    fn one_frame_all_modes_identical() {
        let (layers, x) = stack(1, 3, 41);
        let a = run_mode(&layers, &x, 3, InferenceMode::Offline, None).unwrap();
        let b = run_mode(&layers, &x, 3, InferenceMode::Streaming, None).unwrap();
        let c = run_mode(&layers, &x, 3, InferenceMode::Chunked(4), None).unwrap();
        assert_eq!(a.outputs, b.outputs);
        assert_eq!(a.outputs, c.outputs);
    }

    #[test]
    fn chunk_of_whole_sequence_is_offline() {
        let (layers, x) = stack(8, 2, 42);
        let a = run_mode(&layers, &x, 2, InferenceMode::Offline, None).unwrap();
        let c = run_mode(&layers, &x, 2, InferenceMode::Chunked(8), None).unwrap();
        assert!(a.outputs.max_abs_diff(&c.outputs).unwrap() <= 1e-5);
    }

    #[test]
    fn streaming_matches_causal_single_pass() {
        let (layers, x) = stack(8, 2, 43);
        let s = run_mode(&layers, &x, 2, InferenceMode::Streaming, None).unwrap();
        let mut y = x.clone();
        let mask = expand_mask(&Mask::lower_triangular(8), 2).unwrap();
        for w in &layers {
            let a = attend_full(&y, w, &mask).unwrap();
            y.add_assign(&a).unwrap();
        }
        assert!(s.outputs.max_abs_diff(&y).unwrap() <= 1e-5);
    }

    #[test]
    fn offline_matches_unmasked_pass() {
        let (layers, x) = stack(6, 2, 44);
        let a = run_mode(&layers, &x, 2, InferenceMode::Offline, None).unwrap();
        let b = run_masked(&layers, &x, 2, &ChunkPartition::full(6).unwrap()).unwrap();
        assert!(a.outputs.max_abs_diff(&b).unwrap() <= 1e-5);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("offline".parse::<InferenceMode>().unwrap(), InferenceMode::Offline);
        assert_eq!(
            "chunked(16)".parse::<InferenceMode>().unwrap(),
            InferenceMode::Chunked(16)
        );
        assert!("chunked(0)".parse::<InferenceMode>().is_err());
        assert!("bogus".parse::<InferenceMode>().is_err());
    }
}
