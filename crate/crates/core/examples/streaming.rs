//! Feeds a synthetic video to an untrained model two frames at a time
//! through a bounded KV cache, as a live source would, and compares the
//! result with the equivalent single masked pass.
//!
//!     cargo run --release --example streaming -- [frames] [packet] [window]

use vidgeo::attention::ChunkPartition;
use vidgeo::geometry::{synth_scene, SceneKind, SceneSpec};
use vidgeo::model::{GeometryOutput, Model, ModelConfig};

fn main() -> vidgeo::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let frames = args.next().unwrap_or(24);
    let packet = args.next().unwrap_or(2);
    let window = args.next().unwrap_or(8);

    let scene = synth_scene(&SceneSpec::new(SceneKind::Sphere, frames, 32, 32), 3)?;
    let model = Model::new(ModelConfig::default())?;
    let mut cache = model.new_cache(32, 32, Some(window))?;

    let mut parts = Vec::new();
    let mut start = 0;
    while start < frames {
        let end = (start + packet).min(frames);
        let out = model.forward_streaming(&scene.frames.slice_rows(start, end), start, &mut cache)?;
        println!(
            "frames {start:>3}..{end:<3} cached {:>2} frames, mean depth {:.4}",
            cache.frames_cached(),
            out.depth.sum() / out.depth.len() as f32
        );
        parts.push(out);
        start = end;
    }
    let streamed = GeometryOutput::concat(&parts)?;
    println!("peak cache: {} frames (window {window})", cache.peak_frames());

    // the masked pass sees every earlier frame, so it agrees with the
    // windowed stream only while nothing has been evicted yet
    let lengths = vec![packet; frames / packet];
    if lengths.iter().sum::<usize>() == frames {
        let reference = model.forward(&scene.frames, &ChunkPartition::new(lengths)?)?;
        let fits = window.min(frames);
        let early = streamed.points.slice_rows(0, fits).max_abs_diff(&reference.points.slice_rows(0, fits))?;
        println!("first {fits} frames, max |streamed - masked| = {early:e}");
    }
    Ok(())
}
