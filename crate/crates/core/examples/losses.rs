//! Evaluates the three training losses on a perturbed copy of a synthetic
//! scene and shows that the point loss ignores global scale.
//!
//!     cargo run --release --example losses

use vidgeo::geometry::{synth_scene, SceneKind, SceneSpec};
use vidgeo::losses::{normal_loss, points_loss, points_normal_loss, solve_scale};

fn main() -> vidgeo::Result<()> {
    let scene = synth_scene(&SceneSpec::new(SceneKind::Plane, 2, 16, 16), 1)?;
    let noisy = scene.points.map(|x| x + 0.01 * (7.0 * x).sin());
    for k in [1.0f32, 0.25, 8.0] {
        let pred = noisy.map(|x| k * x);
        let s = solve_scale(&pred, &scene.points, &scene.depth, &scene.valid)?.s;
        let lv = points_loss(&pred, &scene.points, &scene.depth, &scene.valid)?;
        println!("prediction scaled by {k:>5}: solved s = {s:.5}, points loss {:.6}", lv.loss);
    }
    let tilted = scene.normals.map(|n| n + 0.05);
    let ln = normal_loss(&tilted, &scene.normals, &scene.valid)?;
    println!("normal loss of a tilted normal map: {:.4} rad", ln.loss);
    let lpn = points_normal_loss(&noisy, &scene.normals, &scene.valid)?;
    println!("normals derived from the noisy points vs gt: {:.4} rad ({} pixels excluded)", lpn.loss, lpn.excluded);
    Ok(())
}
