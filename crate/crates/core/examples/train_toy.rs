//! Trains the toy geometry model on synthetic plane and sphere sequences and
//! reports the points-loss curve and held-out depth accuracy.
//!
//!     cargo run --release --example train_toy -- [steps] [lr] [lambda_points_normal]

use std::time::Instant;

use vidgeo::attention::InferenceMode;
use vidgeo::losses::{train_toy, DataConfig, LossWeights};
use vidgeo::metrics::{evaluate_sequence, target_from_maps, AlignMode, EvalOptions, MetricAccumulator, Alignment};
use vidgeo::model::ModelConfig;

fn main() -> vidgeo::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|s| s.parse().expect("steps")).unwrap_or(200);
    let lr: f64 = args.next().map(|s| s.parse().expect("lr")).unwrap_or(1e-3);
    // the points/normal consistency term stalls the points loss when
    // training from scratch, so it is off unless asked for
    let lambda_points_normal: f64 = args.next().map(|s| s.parse().expect("lambda")).unwrap_or(0.0);
    let weights = LossWeights {
        lambda_points_normal,
        lambda_normal: 1.0,
    };

    let data = DataConfig::default();
    let start = Instant::now();
    let (model, log) = train_toy(ModelConfig::default(), &data, steps, lr, weights)?;
    let smooth = log.smoothed_points(20);
    if let (Some(first), Some(last)) = (log.records.first(), smooth.last()) {
        println!("points loss: initial {:.4}, final (20-step mean) {:.4}", first.points, last);
    }
    println!("trained {steps} steps in {:.1}s", start.elapsed().as_secs_f64());

    let held_out = DataConfig { seed: 1000, sequences: 4, ..data }.generate()?;
    let mut pooled = MetricAccumulator::default();
    for (i, scene) in held_out.iter().enumerate() {
        let (pred, _) = model.infer(&scene.frames, InferenceMode::Offline, None)?;
        let target = target_from_maps(scene.points.clone(), Some(scene.normals.clone()), scene.valid.clone())?;
        let (report, acc) = evaluate_sequence(&pred, &target, AlignMode::Scale, &EvalOptions::default())?;
        println!(
            "held-out {i}: rel {:.4} delta1 {:.3} normal mean {:.1} deg",
            report.rel.unwrap_or(f64::NAN),
            report.delta1.unwrap_or(f64::NAN),
            report.normal_mean_deg.unwrap_or(f64::NAN)
        );
        pooled.merge(&acc);
    }
    let all = pooled.report(Alignment::None);
    println!("held-out pooled: rel {:.4} delta1 {:.3}", all.rel.unwrap_or(f64::NAN), all.delta1.unwrap_or(f64::NAN));
    Ok(())
}
