//! Scores a distorted copy of a ground-truth sequence under the three
//! alignment modes, with and without evaluation-time cropping.
//!
//!     cargo run --release --example eval

use vidgeo::geometry::{synth_scene, SceneKind, SceneSpec};
use vidgeo::metrics::{evaluate_sequence, target_from_maps, AlignMode, EvalOptions};
use vidgeo::model::GeometryOutput;

fn main() -> vidgeo::Result<()> {
    let scene = synth_scene(&SceneSpec::new(SceneKind::Sphere, 4, 32, 32), 5)?;
    // unknown global scale, a mild depth-dependent bias and a tilted normal field
    let points = scene.points.map(|x| 0.4 * x + 0.01 * x * x);
    let normals = scene.normals.map(|n| n + 0.1);
    let pred = GeometryOutput::from_maps(points, normals)?;
    let target = target_from_maps(scene.points.clone(), Some(scene.normals.clone()), scene.valid.clone())?;

    for opts in [EvalOptions::default(), EvalOptions { max_depth: Some(6.0), crop: 2 }] {
        for mode in [AlignMode::Scale, AlignMode::Affine, AlignMode::None] {
            let (r, _) = evaluate_sequence(&pred, &target, mode, &opts)?;
            let show = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
            println!(
                "{mode:?} crop {} max_depth {:?}: rel {} delta1 {} rel_p {} normal mean {} deg, {} px",
                opts.crop,
                opts.max_depth,
                show(r.rel),
                show(r.delta1),
                show(r.rel_p),
                show(r.normal_mean_deg),
                r.valid_count
            );
        }
    }
    Ok(())
}
