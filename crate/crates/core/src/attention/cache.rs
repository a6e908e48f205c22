use super::kernel::{attention_kernel, AttentionWeights, KeyMask};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Keys and values of completed chunks for one attention layer.
///
/// Rows are tokens, frames are contiguous runs of `tokens_per_frame` rows,
/// and head `h` owns columns `h·d/heads .. (h+1)·d/heads`. With a window
/// of `w` frames only the most recent `w` frames are kept after each append.
/// Windowed attention is an approximation of the unbounded computation; it
/// is exact as long as no frame has been evicted.
#[derive(Clone, Debug)]
pub struct LayerCache<T = f32> {
    dim: usize,
    tokens_per_frame: usize,
    window: Option<usize>,
    keys: Vec<T>,
    values: Vec<T>,
    frames_cached: usize,
    next_frame: usize,
    peak_frames: usize,
}

impl<T: Real> LayerCache<T> {
    pub fn new(dim: usize, tokens_per_frame: usize, window: Option<usize>) -> Result<Self> {
        if tokens_per_frame == 0 || window == Some(0) {
            return Err(Error::Config(
                "cache needs tokens_per_frame >= 1 and window >= 1".into(),
            ));
        }
        Ok(LayerCache {
            dim,
            tokens_per_frame,
            window,
            keys: Vec::new(),
            values: Vec::new(),
            frames_cached: 0,
            next_frame: 0,
            peak_frames: 0,
        })
    }

    /// Number of frames currently held.
    pub fn frames_cached(&self) -> usize {
        self.frames_cached
    }

    /// Index of the first frame of the next expected chunk.
    pub fn next_frame(&self) -> usize {
        self.next_frame
    }

    /// Largest number of frames held at any point of the sequence.
    pub fn peak_frames(&self) -> usize {
        self.peak_frames
    }

    pub fn window(&self) -> Option<usize> {
        self.window
    }

    /// Absolute indices of the cached frames.
    pub fn cached_frame_range(&self) -> std::ops::Range<usize> {
        self.next_frame - self.frames_cached..self.next_frame
    }

    /// Drops all state so the cache can start a new sequence.
    pub fn reset(&mut self) {
        self.keys.clear();
        self.values.clear();
        self.frames_cached = 0;
        self.next_frame = 0;
        self.peak_frames = 0;
    }

    /// Attends already-projected queries of a new chunk to cached keys plus
    /// the chunk's own keys, then appends the chunk's keys and values.
    ///
    /// Every query sees every key: past chunks causally, the new chunk
    /// bidirectionally. This is exactly the chunk mask restricted to the
    /// new rows, with keys in the same order as a single masked pass.
    pub fn attend(
        &mut self,
        start_frame: usize,
        q: &Tensor<T>,
        k: &Tensor<T>,
        v: &Tensor<T>,
        heads: usize,
    ) -> Result<Tensor<T>> {
        if start_frame != self.next_frame {
            return Err(Error::Sequence {
                expected: self.next_frame,
                got: start_frame,
            });
        }
        let (rows, d) = k.matrix_dims()?;
        if d != self.dim || rows % self.tokens_per_frame != 0 || rows == 0 {
            return Err(Error::shape(format!(
                "chunk keys {:?} for cache of width {} with {} tokens per frame",
                k.dims(),
                self.dim,
                self.tokens_per_frame
            )));
        }
        let frames = rows / self.tokens_per_frame;
        let cached_rows = self.keys.len() / d;
        let all_keys = self.joined(&self.keys, k, cached_rows)?;
        let all_values = self.joined(&self.values, v, cached_rows)?;
        let (out, _) = attention_kernel(q, &all_keys, &all_values, heads, KeyMask::All, false)?;

        self.keys = all_keys.into_data();
        self.values = all_values.into_data();
        self.frames_cached += frames;
        self.next_frame += frames;
        if let Some(w) = self.window {
            if self.frames_cached > w {
                let drop = (self.frames_cached - w) * self.tokens_per_frame * d;
                self.keys.drain(..drop);
                self.values.drain(..drop);
                self.frames_cached = w;
            }
        }
        self.peak_frames = self.peak_frames.max(self.frames_cached);
        Ok(out)
    }

    fn joined(&self, cached: &[T], new: &Tensor<T>, cached_rows: usize) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(cached.len() + new.len());
        data.extend_from_slice(cached);
        data.extend_from_slice(new.data());
        Tensor::new([cached_rows + new.dims()[0], self.dim], data)
    }
}

/// One [`LayerCache`] per attention layer of a stack.
#[derive(Clone, Debug)]
pub struct KvCache<T = f32> {
    layers: Vec<LayerCache<T>>,
}

impl<T: Real> KvCache<T> {
    pub fn new(
        layers: usize,
        dim: usize,
        tokens_per_frame: usize,
        window: Option<usize>,
    ) -> Result<Self> {
        Ok(KvCache {
            layers: (0..layers)
                .map(|_| LayerCache::new(dim, tokens_per_frame, window))
                .collect::<Result<_>>()?,
        })
    }

    pub fn layer(&self, l: usize) -> &LayerCache<T> {
        &self.layers[l]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut LayerCache<T> {
        &mut self.layers[l]
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn reset(&mut self) {
        self.layers.iter_mut().for_each(LayerCache::reset);
    }

    pub fn peak_frames(&self) -> usize {
        self.layers.iter().map(|l| l.peak_frames()).max().unwrap_or(0)
    }

    pub fn frames_cached(&self) -> usize {
        self.layers.iter().map(|l| l.frames_cached()).max().unwrap_or(0)
    }

    /// Frames seen so far (equal across layers once a chunk has passed
    /// through the whole stack).
    pub fn next_frame(&self) -> usize {
        self.layers.first().map_or(0, |l| l.next_frame())
    }
}

/// A contiguous chunk of frames submitted to a cached layer.
#[derive(Clone, Copy, Debug)]
pub struct ChunkInput<'a, T = f32> {
    /// Absolute index of the chunk's first frame in the sequence.
    pub start_frame: usize,
    /// Token rows of the chunk, frame-major.
    pub tokens: &'a Tensor<T>,
}

/// Streaming attention for one layer: projects the chunk, attends to the
/// cache plus the chunk, and extends the cache.
pub fn attend_streaming<T: Real>(
    chunk: ChunkInput<'_, T>,
    weights: &AttentionWeights<T>,
    cache: &mut LayerCache<T>,
) -> Result<Tensor<T>> {
    let (q, k, v) = weights.project(chunk.tokens)?;
    let heads_out = cache.attend(chunk.start_frame, &q, &k, &v, weights.heads)?;
    weights.output(&heads_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::kernel::attend_full;
    use crate::attention::partition::{build_mask, expand_mask, ChunkPartition, Mask};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn run_chunks(
        x: &Tensor,
        w: &AttentionWeights,
        p: &ChunkPartition,
        tpf: usize,
        window: Option<usize>,
    ) -> (Tensor, usize) {
        let mut cache = LayerCache::new(w.dim(), tpf, window).unwrap();
        let mut parts = Vec::new();
        for r in p.ranges() {
            let tokens = x.slice_rows(r.start * tpf, r.end * tpf);
            let chunk = ChunkInput {
                start_frame: r.start,
                tokens: &tokens,
            };
            parts.push(attend_streaming(chunk, w, &mut cache).unwrap());
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        (Tensor::concat_rows(&refs).unwrap(), cache.peak_frames())
    }

    fn setup(n: usize, tpf: usize, seed: u64) -> (Tensor, AttentionWeights) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = AttentionWeights::random(16, 4, &mut rng).unwrap();
        let x = Tensor::from_fn([n * tpf, 16], |_| rng.gen_range(-1.0f32..1.0));
        (x, w)
    }

    #[test]
    fn single_chunk_equals_full_attention() {
        let (x, w) = setup(4, 2, 31);
        let (y, _) = run_chunks(&x, &w, &ChunkPartition::full(4).unwrap(), 2, None);
        let full = attend_full(&x, &w, &Mask::ones(8, 8)).unwrap();
        assert_eq!(y, full);
    }

    #[test]
    fn unit_chunks_equal_causal_pass() {
        let (x, w) = setup(5, 2, 32);
        let p = ChunkPartition::streaming(5).unwrap();
        let (y, _) = run_chunks(&x, &w, &p, 2, None);
        let mask = expand_mask(&Mask::lower_triangular(5), 2).unwrap();
        let full = attend_full(&x, &w, &mask).unwrap();
        assert!(y.max_abs_diff(&full).unwrap() <= 1e-5);
    }

    #[test]
    fn two_two_partition_matches_masked_pass() {
        let (x, w) = setup(4, 3, 33);
        let p = ChunkPartition::new(vec![2, 2]).unwrap();
        let (y, _) = run_chunks(&x, &w, &p, 3, None);
        let mask = expand_mask(&build_mask(&p), 3).unwrap();
        assert!(y.max_abs_diff(&attend_full(&x, &w, &mask).unwrap()).unwrap() <= 1e-5);
    }

    #[test]
    fn out_of_order_chunk_is_rejected() {
        let (x, w) = setup(2, 1, 34);
        let mut cache = LayerCache::new(16, 1, None).unwrap();
        let t = x.slice_rows(1, 2);
        let err = attend_streaming(
            ChunkInput {
                start_frame: 1,
                tokens: &t,
            },
            &w,
            &mut cache,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Sequence { expected: 0, got: 1 }));
    }

    #[test]
    fn window_bounds_cache_and_is_exact_until_eviction() {
        let (x, w) = setup(12, 1, 35);
        let p = ChunkPartition::chunked(12, 2).unwrap();
        let (unbounded, peak_u) = run_chunks(&x, &w, &p, 1, None);
        let (windowed, peak_w) = run_chunks(&x, &w, &p, 1, Some(4));
        assert_eq!(peak_u, 12);
        assert!(peak_w <= 4);
        // chunks 0..=1 see at most 2 past frames, well inside the window
        let exact_rows = 4;
        assert_eq!(
            windowed.slice_rows(0, exact_rows),
            unbounded.slice_rows(0, exact_rows)
        );
        // chunk 2 attends to frames 0..4 with a 4-frame window: still exact
        assert_eq!(windowed.slice_rows(4, 6), unbounded.slice_rows(4, 6));
        assert_ne!(windowed.slice_rows(8, 12), unbounded.slice_rows(8, 12));
    }

    #[test]
    fn reset_starts_a_new_sequence() {
        let (x, w) = setup(2, 1, 36);
        let mut cache = LayerCache::new(16, 1, None).unwrap();
        let t0 = x.slice_rows(0, 1);
        let first = attend_streaming(
            ChunkInput {
                start_frame: 0,
                tokens: &t0,
            },
            &w,
            &mut cache,
        )
        .unwrap();
        cache.reset();
        assert_eq!(cache.frames_cached(), 0);
        let again = attend_streaming(
            ChunkInput {
                start_frame: 0,
                tokens: &t0,
            },
            &w,
            &mut cache,
        )
        .unwrap();
        assert_eq!(first, again);
        assert_eq!(cache.cached_frame_range(), 0..1);
    }
}
