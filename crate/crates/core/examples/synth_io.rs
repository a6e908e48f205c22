//! Renders a synthetic scene, writes it as per-frame tensor files, reads it
//! back, and round-trips a model checkpoint.
//!
//!     cargo run --release --example synth_io -- [out_dir]

use std::path::PathBuf;

use vidgeo::geometry::{synth_scene, SceneKind, SceneSpec};
use vidgeo::io::{count_frames, load_checkpoint, read_frames, read_mask_frames, read_tensor, save_checkpoint, write_scene};
use vidgeo::model::{Model, ModelConfig};

fn main() -> vidgeo::Result<()> {
    let out: PathBuf = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("vidgeo-synth"));
    let spec = SceneSpec::new(SceneKind::Boxes, 6, 24, 32);
    let scene = synth_scene(&spec, 11)?;
    write_scene(&out, &spec, &scene)?;
    println!("wrote {} frames to {}", count_frames(&out, "depth"), out.display());

    let depth = read_frames(&out, "depth")?;
    let valid = read_mask_frames(&out, "valid")?;
    println!(
        "depth {:?} read back bit-exact: {}; {} of {} pixels valid",
        depth.dims(),
        depth.data().iter().zip(scene.depth.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
        valid.count(),
        valid.len()
    );
    let first = read_tensor(&out.join("normals_0000.vgeo"))?;
    println!("normals_0000.vgeo: dtype {} dims {:?}", first.dtype(), first.dims());

    let model = Model::new(ModelConfig::default())?;
    let ckpt = out.join("checkpoint");
    save_checkpoint(&ckpt, &model)?;
    let loaded = load_checkpoint(&ckpt)?;
    let same = model.params().iter().zip(loaded.params()).all(|(a, b)| a == b);
    println!("checkpoint with {} parameters restored identically: {same}", model.num_parameters());
    Ok(())
}
