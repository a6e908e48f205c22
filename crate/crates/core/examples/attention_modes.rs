//! Runs one residual attention stack in the three inference modes and
//! checks each against a single masked pass, then runs the built-in
//! self-check suite.
//!
//!     cargo run --release --example attention_modes

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vidgeo::attention::verify::{run_suite, VerifyConfig};
use vidgeo::attention::{build_mask, run_masked, run_mode, AttentionWeights, InferenceMode};
use vidgeo::Tensor;

fn main() -> vidgeo::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (frames, tpf, dim, heads) = (12, 4, 32, 4);
    let layers: Vec<AttentionWeights> =
        (0..3).map(|_| AttentionWeights::random(dim, heads, &mut rng)).collect::<vidgeo::Result<_>>()?;
    let tokens = Tensor::from_fn([frames * tpf, dim], |i| ((i * 37 % 101) as f32 / 50.0) - 1.0);

    for mode in [InferenceMode::Offline, InferenceMode::Streaming, InferenceMode::Chunked(4)] {
        let partition = mode.partition(frames)?;
        let cached = run_mode(&layers, &tokens, tpf, mode, None)?;
        let masked = run_masked(&layers, &tokens, tpf, &partition)?;
        let mask = build_mask(&partition);
        let visible: usize = (0..frames).map(|i| (0..frames).filter(|&j| mask.get(i, j)).count()).sum();
        println!(
            "{mode:>12}: chunks {:?}, visible frame pairs {visible}/{}, peak cache {} frames, max |cached - masked| = {:e}",
            partition.lengths(),
            frames * frames,
            cached.peak_cache_frames,
            cached.outputs.max_abs_diff(&masked)?
        );
    }

    let windowed = run_mode(&layers, &tokens, tpf, InferenceMode::Chunked(4), Some(4))?;
    println!("chunked(4) with a 4-frame window: peak cache {} frames", windowed.peak_cache_frames);

    let report = run_suite(&VerifyConfig::default())?;
    for p in &report.properties {
        println!("{:<28} max deviation {:.2e} (tol {:.0e})", p.name, p.max_deviation, p.tolerance);
    }
    println!("suite {}", if report.passed() { "passed" } else { "FAILED" });
    Ok(())
}
