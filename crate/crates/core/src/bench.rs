//! Per-frame cost and cache occupancy of the inference modes as the
//! sequence grows.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::InferenceMode;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const BENCH_COLUMNS: [&str; 6] = ["mode", "N", "C", "window", "ms_per_frame", "peak_cache_frames"];

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    /// Sequence lengths are powers of two from `min_frames` up to this.
    pub max_frames: usize,
    pub min_frames: usize,
    pub chunk_sizes: Vec<usize>,
    /// KV-cache window in frames for the chunked runs; `None` = unbounded.
    pub window: Option<usize>,
    /// Longest sequence run as one full pass; its cost is quadratic.
    pub max_offline_frames: usize,
    pub height: usize,
    pub width: usize,
    /// Each timing is the fastest of this many runs.
    pub repeats: usize,
    pub model: ModelConfig,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            max_frames: 512,
            min_frames: 16,
            chunk_sizes: vec![16],
            window: Some(16),
            max_offline_frames: 256,
            height: 32,
            width: 32,
            repeats: 3,
            model: ModelConfig::default(),
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return Err(Error::Config(format!(
                "need 1 ≤ min_frames ≤ max_frames, got {} and {}",
                self.min_frames, self.max_frames
            )));
        }
        if self.chunk_sizes.is_empty() || self.chunk_sizes.contains(&0) {
            return Err(Error::Config("chunk sizes must be a non-empty list of positive sizes".into()));
        }
        if self.window == Some(0) || self.repeats == 0 {
            return Err(Error::Config("window and repeats must be positive".into()));
        }
        self.model.validate()
    }

    pub fn lengths(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut n = self.min_frames;
        while n < self.max_frames {
            out.push(n);
            n *= 2;
        }
        out.push(self.max_frames);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub mode: &'static str,
    pub frames: usize,
    pub chunk: usize,
    pub window: Option<usize>,
    pub ms_per_frame: f64,
    pub peak_cache_frames: usize,
}

/// Wall time per frame of `model` on `frames`, best of `repeats`.
pub fn time_mode(
    model: &Model,
    frames: &Tensor,
    mode: InferenceMode,
    window: Option<usize>,
    repeats: usize,
) -> Result<(f64, usize)> {
    let n = frames.dims()[0];
    let mut best = f64::INFINITY;
    let mut peak = 0;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let (_, p) = model.infer(frames, mode, window)?;
        best = best.min(t.elapsed().as_secs_f64());
        peak = p;
    }
    Ok((best * 1e3 / n as f64, peak))
}

pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let model = Model::new(cfg.model.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = cfg.model.in_channels;
    let all = Tensor::from_fn([cfg.max_frames, c, cfg.height, cfg.width], |_| rng.gen_range(0.0f32..1.0));
    let mut rows = Vec::new();
    for n in cfg.lengths() {
        let frames = all.slice_rows(0, n);
        if n <= cfg.max_offline_frames {
            let (ms, peak) = time_mode(&model, &frames, InferenceMode::Offline, None, cfg.repeats)?;
            rows.push(BenchRow {
                mode: "offline",
                frames: n,
                chunk: n,
                window: None,
                ms_per_frame: ms,
                peak_cache_frames: peak,
            });
        }
        for &chunk in &cfg.chunk_sizes {
            let (ms, peak) = time_mode(&model, &frames, InferenceMode::Chunked(chunk), cfg.window, cfg.repeats)?;
            rows.push(BenchRow {
                mode: "chunked",
                frames: n,
                chunk,
                window: cfg.window,
                ms_per_frame: ms,
                peak_cache_frames: peak,
            });
        }
    }
    Ok(rows)
}

/// CSV with [`BENCH_COLUMNS`]; an unbounded window is an empty cell.
pub fn write_bench_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BENCH_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.mode.to_string(),
            r.frames.to_string(),
            r.chunk.to_string(),
            r.window.map(|w| w.to_string()).unwrap_or_default(),
            format!("{:.4}", r.ms_per_frame),
            r.peak_cache_frames.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
