//! Densifies corrupted synthetic depth (holes plus gross outliers) into
//! pseudo-labels, first with the identity teacher and then with a freshly
//! trained toy teacher, and compares both against ground truth.
//!
//!     cargo run --release --example refine -- [teacher_steps]

use std::time::Instant;

use vidgeo::geometry::{SceneData, SceneKind, ValidMask};
use vidgeo::losses::DataConfig;
use vidgeo::metrics::depth_metrics;
use vidgeo::model::ModelConfig;
use vidgeo::refine::{
    corrupt_scene, refine_pipeline, CompletionModel, CorruptionConfig, IdentityTeacher, RefineConfig,
    TeacherTrainConfig, ToyTeacher,
};

fn rel(pred: &vidgeo::Tensor, scene: &SceneData, mask: &ValidMask) -> f64 {
    depth_metrics(pred, &scene.depth, mask, 1.0).unwrap().rel
}

fn main() -> vidgeo::Result<()> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse().expect("steps")).unwrap_or(150);
    let start = Instant::now();
    let mut teacher = ToyTeacher::new(ModelConfig::default())?;
    let losses = teacher.train(&TeacherTrainConfig {
        steps,
        ..Default::default()
    })?;
    if let (Some(a), Some(b)) = (losses.first(), losses.last()) {
        println!("teacher log-L1: {a:.4} -> {b:.4} in {:.1}s", start.elapsed().as_secs_f64());
    }

    let held_out = DataConfig {
        kinds: vec![SceneKind::Plane],
        sequences: 4,
        seed: 77,
        ..Default::default()
    }
    .generate()?;
    let corruption = CorruptionConfig::default();
    for (i, scene) in held_out.iter().enumerate() {
        let c = corrupt_scene(scene, &corruption, 500 + i as u64)?;
        let input_rel = rel(&c.raw.values, scene, &c.raw.valid);
        let teachers: [(&str, &dyn CompletionModel); 2] = [("identity", &IdentityTeacher), ("toy", &teacher)];
        for (name, t) in teachers {
            let out = refine_pipeline(&scene.frames, &c.raw, &c.mono, &RefineConfig::default(), t)?;
            let dense = out.pseudo_labels.data().iter().all(|d| *d > 0.0 && d.is_finite());
            println!(
                "scene {i} {name:>8}: input rel {input_rel:.4}  pseudo-label rel {:.4}  kept {}/{}  dense {dense}",
                rel(&out.pseudo_labels, scene, &scene.valid),
                out.filtered.valid.count(),
                c.raw.valid.count(),
            );
        }
    }
    Ok(())
}
