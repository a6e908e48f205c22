use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{total_loss_maps, LossWeights, Targets};
use crate::attention::ChunkPartition;
use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::geometry::{synth_scene, SceneData, SceneKind, SceneSpec};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

/// AdamW with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(lr: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(format!(
                "{} parameters, {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.dims().to_vec())).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(&mut self.v)) {
            p.check_same_dims(g)?;
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                let gi = g.data()[i] as f64;
                let mi = self.beta1 * md[i] as f64 + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * vd[i] as f64 + (1.0 - self.beta2) * gi * gi;
                md[i] = mi as f32;
                vd[i] = vi as f32;
                let update = (mi / bc1) / ((vi / bc2).sqrt() + self.eps) + self.weight_decay * pd[i] as f64;
                pd[i] = (pd[i] as f64 - self.lr * update) as f32;
            }
        }
        Ok(())
    }
}

/// Synthetic training sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// Scene kinds, cycled over sequences.
    pub kinds: Vec<SceneKind>,
    pub sequences: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            kinds: vec![SceneKind::Plane, SceneKind::Sphere],
            sequences: 64,
            frames: 4,
            height: 32,
            width: 32,
            seed: 0,
        }
    }
}

impl DataConfig {
    /// Scene parameters vary per sequence so held-out seeds give new
    /// surfaces, not just new trajectories.
    pub fn spec(&self, index: usize) -> SceneSpec {
        let kind = self.kinds[index % self.kinds.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(7919).wrapping_add(index as u64));
        let mut spec = SceneSpec::new(kind, self.frames, self.height, self.width);
        spec.plane_normal = [rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), 1.0];
        spec.plane_offset = rng.gen_range(2.5..4.0);
        spec.sphere_center = [rng.gen_range(-0.4..0.4), rng.gen_range(-0.3..0.3), rng.gen_range(3.5..4.5)];
        spec.sphere_radius = rng.gen_range(0.9..1.4);
        spec
    }

    pub fn generate(&self) -> Result<Vec<SceneData>> {
        if self.kinds.is_empty() || self.sequences == 0 {
            return Err(Error::Config("data config needs scene kinds and sequences".into()));
        }
        (0..self.sequences)
            .map(|i| synth_scene(&self.spec(i), self.seed.wrapping_mul(1_000_003).wrapping_add(i as u64)))
            .collect()
    }
}

pub fn targets_of(scene: &SceneData) -> Targets {
    Targets {
        points: scene.points.clone(),
        depth: scene.depth.clone(),
        normals: Some(scene.normals.clone()),
        valid: scene.valid.clone(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub lr: f64,
    pub weights: LossWeights,
    /// Sequences per step; their gradients are averaged.
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            steps: 200,
            lr: 1e-3,
            weights: LossWeights::default(),
            batch: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub total: f64,
    pub points: f64,
    pub normal: f64,
    pub points_normal: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<StepRecord>,
}

impl TrainingLog {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Trailing moving average of the points loss over `window` steps.
    pub fn smoothed_points(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        (0..self.records.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(w);
                let span = &self.records[lo..=i];
                span.iter().map(|r| r.points).sum::<f64>() / span.len() as f64
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "total", "points", "normal", "points_normal"])?;
        for r in &self.records {
            w.write_record([
                r.step.to_string(),
                r.total.to_string(),
                r.points.to_string(),
                r.normal.to_string(),
                r.points_normal.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Samples the chunk layout of one training batch: the whole sequence, one
/// frame per chunk, or random chunks of 2 to 4 frames, with equal odds.
pub fn partition_for_step<R: Rng + ?Sized>(rng: &mut R, frames: usize) -> Result<ChunkPartition> {
    match rng.gen_range(0..3) {
        0 => ChunkPartition::full(frames),
        1 => ChunkPartition::streaming(frames),
        _ => {
            let mut lengths = Vec::new();
            let mut left = frames;
            while left > 0 {
                let l = rng.gen_range(2..=4).min(left);
                lengths.push(l);
                left -= l;
            }
            ChunkPartition::new(lengths)
        }
    }
}

/// Trains `model` in place on `data`, `opts.batch` random sequences per step.
pub fn train_model(model: &mut Model, data: &[SceneData], opts: &TrainOptions) -> Result<TrainingLog> {
    opts.weights.validate()?;
    if data.is_empty() {
        return Err(Error::Config("no training sequences".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = AdamW::new(opts.lr);
    let mut log = TrainingLog::default();
    if opts.batch == 0 {
        return Err(Error::Config("batch must be at least 1".into()));
    }
    for step in 0..opts.steps {
        let mut grads: Vec<Tensor> = Vec::new();
        let mut record = StepRecord {
            step,
            total: 0.0,
            points: 0.0,
            normal: 0.0,
            points_normal: 0.0,
        };
        for _ in 0..opts.batch {
            let scene = &data[rng.gen_range(0..data.len())];
            let partition = partition_for_step(&mut rng, scene.frames.dims()[0])?;
            let targets = targets_of(scene);
            let mut g = Graph::new();
            let trace = model.forward_train(&mut g, &scene.frames, &partition)?;
            let loss = total_loss_maps(g.value(trace.points), g.value(trace.normals), &targets, &opts.weights)?;
            if !((loss.total as f64).is_finite() && loss.grad_points.all_finite() && loss.grad_normals.all_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite loss at step {step}: total {}, points {}, normal {}, points_normal {}",
                    loss.total, loss.points, loss.normal, loss.points_normal
                )));
            }
            let k = 1.0 / opts.batch as f64;
            record.total += loss.total as f64 * k;
            record.points += loss.points as f64 * k;
            record.normal += loss.normal as f64 * k;
            record.points_normal += loss.points_normal as f64 * k;
            let bg = g.backward(vec![(trace.points, loss.grad_points), (trace.normals, loss.grad_normals)])?;
            let part = model.collect_grads(&trace, &bg);
            if grads.is_empty() {
                grads = part;
            } else {
                for (a, b) in grads.iter_mut().zip(&part) {
                    a.add_assign(b)?;
                }
            }
        }
        if opts.batch > 1 {
            let k = 1.0 / opts.batch as f32;
            grads.iter_mut().for_each(|t| *t = t.scale(k));
        }
        log.records.push(record);
        if let Some(bad) = grads.iter().position(|t| !t.all_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient for {} at step {step}",
                model.param_names()[bad]
            )));
        }
        adam.step(model.params_mut(), &grads)?;
    }
    Ok(log)
}

/// Initializes a model from `model_config`, renders `data_config` and trains.
pub fn train_toy(
    model_config: ModelConfig,
    data_config: &DataConfig,
    steps: usize,
    lr: f64,
    weights: LossWeights,
) -> Result<(Model, TrainingLog)> {
    let mut model = Model::new(model_config)?;
    let data = data_config.generate()?;
    let opts = TrainOptions {
        steps,
        lr,
        weights,
        seed: model.config().seed,
        ..Default::default()
    };
    let log = train_model(&mut model, &data, &opts)?;
    Ok((model, log))
}
