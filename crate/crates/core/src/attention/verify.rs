//! Self-check suite for chunked attention, run by `vidgeo attn-verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernel::{attend_full, AttentionWeights};
use super::modes::{run_masked, run_partition};
use super::partition::{build_mask, expand_mask, ChunkPartition, Mask};
use crate::error::Result;
use crate::tensor::Tensor;

pub const TOLERANCE: f32 = 1e-5;
const TOKENS_PER_FRAME: usize = 2;
const LAYERS: usize = 2;

#[derive(Clone, Debug)]
pub struct VerifyConfig {
    pub frames: usize,
    pub dim: usize,
    pub heads: usize,
    pub trials: usize,
    pub seed: u64,
    /// Negative control: the single-pass reference uses a corrupted mask.
    pub break_mask: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            frames: 8,
            dim: 64,
            heads: 4,
            trials: 20,
            seed: 0,
            break_mask: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PropertyResult {
    pub name: &'static str,
    pub max_deviation: f32,
    pub tolerance: f32,
}

impl PropertyResult {
    pub fn passed(&self) -> bool {
        self.max_deviation <= self.tolerance
    }
}

#[derive(Clone, Debug)]
pub struct VerifyReport {
    pub properties: Vec<PropertyResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.properties.iter().all(PropertyResult::passed)
    }
}

/// Chunk mask with the inequality flipped; only used as a negative control.
fn broken_mask(p: &ChunkPartition) -> Mask {
    let ch = p.chunk_of_frames();
    Mask::from_fn(ch.len(), ch.len(), |i, j| ch[j] >= ch[i])
}

fn reference(
    layers: &[AttentionWeights],
    x: &Tensor,
    p: &ChunkPartition,
    break_mask: bool,
) -> Result<Tensor> {
    if !break_mask {
        return run_masked(layers, x, TOKENS_PER_FRAME, p);
    }
    let mask = expand_mask(&broken_mask(p), TOKENS_PER_FRAME)?;
    let mut y = x.clone();
    for w in layers {
        let a = attend_full(&y, w, &mask)?;
        y.add_assign(&a)?;
    }
    Ok(y)
}

pub fn run_suite(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.frames;
    let t = TOKENS_PER_FRAME;
    let mut mask_dev = 0.0f32;
    let mut equiv = 0.0f32;
    let mut offline = 0.0f32;
    let mut streaming = 0.0f32;
    let mut causal = 0.0f32;
    let mut window = 0.0f32;

    for _ in 0..cfg.trials {
        let layers: Vec<AttentionWeights> = (0..LAYERS)
            .map(|_| AttentionWeights::random(cfg.dim, cfg.heads, &mut rng))
            .collect::<Result<_>>()?;
        let x = Tensor::from_fn([n * t, cfg.dim], |_| rng.gen_range(-1.0f32..1.0));
        let p = ChunkPartition::random(n, n, &mut rng)?;

        let built = if cfg.break_mask {
            broken_mask(&p)
        } else {
            build_mask(&p)
        };
        let ch = p.chunk_of_frames();
        for i in 0..n {
            for j in 0..n {
                if built.get(i, j) != (ch[j] <= ch[i]) {
                    mask_dev = 1.0;
                }
            }
        }

        let chunked = run_partition(&layers, &x, t, &p, None)?.outputs;
        equiv = equiv.max(chunked.max_abs_diff(&reference(&layers, &x, &p, cfg.break_mask)?)?);

        let full = ChunkPartition::full(n)?;
        let a = run_partition(&layers, &x, t, &full, None)?.outputs;
        let mut b = x.clone();
        for w in &layers {
            let y = attend_full(&b, w, &Mask::ones(n * t, n * t))?;
            b.add_assign(&y)?;
        }
        offline = offline.max(a.max_abs_diff(&b)?);

        let stream = ChunkPartition::streaming(n)?;
        let a = run_partition(&layers, &x, t, &stream, None)?.outputs;
        let causal_mask = expand_mask(&Mask::lower_triangular(n), t)?;
        let mut b = x.clone();
        for w in &layers {
            let y = attend_full(&b, w, &causal_mask)?;
            b.add_assign(&y)?;
        }
        streaming = streaming.max(a.max_abs_diff(&b)?);

        // perturb the last chunk; earlier chunks must not move at all
        let ranges = p.ranges();
        let last = ranges.last().unwrap().clone();
        let mut x2 = x.clone();
        for r in last.start * t..last.end * t {
            for v in x2.row_mut(r) {
                *v += rng.gen_range(-1.0f32..1.0);
            }
        }
        let before = reference(&layers, &x, &p, cfg.break_mask)?;
        let after = reference(&layers, &x2, &p, cfg.break_mask)?;
        let keep = last.start * t;
        if keep > 0 {
            let d = before
                .slice_rows(0, keep)
                .max_abs_diff(&after.slice_rows(0, keep))?;
            causal = causal.max(d);
        }

        let wide = run_partition(&layers, &x, t, &p, Some(n))?.outputs;
        window = window.max(wide.max_abs_diff(&chunked)?);
    }

    let prop = |name, max_deviation, tolerance| PropertyResult {
        name,
        max_deviation,
        tolerance,
    };
    Ok(VerifyReport {
        properties: vec![
            prop("mask_matches_predicate", mask_dev, 0.0),
            prop("chunked_cache_equals_masked_pass", equiv, TOLERANCE),
            prop("single_chunk_equals_full_attention", offline, TOLERANCE),
            prop("unit_chunks_equal_causal_attention", streaming, TOLERANCE),
            prop("earlier_chunks_unchanged_by_future", causal, 0.0),
            prop("window_covering_sequence_is_exact", window, 0.0),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let cfg = VerifyConfig {
            frames: 5,
            dim: 16,
            heads: 2,
            trials: 4,
            ..Default::default()
        };
        let report = run_suite(&cfg).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn broken_mask_fails() {
        let cfg = VerifyConfig {
            frames: 5,
            dim: 16,
            heads: 2,
            trials: 4,
            break_mask: true,
            ..Default::default()
        };
        assert!(!run_suite(&cfg).unwrap().passed());
    }
}
