//! Per-frame latency and cache occupancy of full-sequence and chunked
//! inference as the video grows, printed as CSV.
//!
//!     cargo run --release --example bench -- [max_frames]

use vidgeo::bench::{run_bench, write_bench_csv, BenchConfig};

fn main() -> vidgeo::Result<()> {
    let max_frames = std::env::args().nth(1).map(|s| s.parse().expect("max_frames")).unwrap_or(128);
    let cfg = BenchConfig {
        max_frames,
        max_offline_frames: max_frames.min(128),
        chunk_sizes: vec![4, 16],
        repeats: 2,
        ..Default::default()
    };
    let rows = run_bench(&cfg)?;
    write_bench_csv(&rows, std::io::stdout().lock())
}
