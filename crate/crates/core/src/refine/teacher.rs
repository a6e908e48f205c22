use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::synthetic::{corrupt_scene, CorruptionConfig};
use super::{densify, normalize_sequence, NormalizationState, RefineConfig};
use crate::attention::ChunkPartition;
use crate::autograd::{dims4, Graph};
use crate::error::{Error, Result};
use crate::geometry::z_channel;
use crate::losses::{AdamW, DataConfig};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

/// Maps an RGB sequence `[N×3×H×W]` and normalized log priors `[N×H×W]` to
/// dense normalized depth `[N×H×W]`.
pub trait CompletionModel {
    fn complete(&self, frames: &Tensor, log_priors: &Tensor) -> Result<Tensor>;
}

/// Returns `exp(log_prior)` untouched.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityTeacher;

impl CompletionModel for IdentityTeacher {
    fn complete(&self, _frames: &Tensor, log_priors: &Tensor) -> Result<Tensor> {
        Ok(log_priors.map(f32::exp))
    }
}

/// Runs the teacher and restores metric scale: `teacher(frames, lp) · m`.
pub fn complete_sequence(
    frames: &Tensor,
    log_priors: &Tensor,
    state: &NormalizationState,
    teacher: &dyn CompletionModel,
) -> Result<Tensor> {
    let [n, _, h, w] = dims4(frames)?;
    if log_priors.dims() != [n, h, w] {
        return Err(Error::shape(format!(
            "log priors {:?} do not match frames {:?}",
            log_priors.dims(),
            frames.dims()
        )));
    }
    let out = teacher.complete(frames, log_priors)?;
    if out.dims() != log_priors.dims() {
        return Err(Error::shape(format!("teacher returned {:?}, expected {:?}", out.dims(), log_priors.dims())));
    }
    if let Some(bad) = out.data().iter().find(|d| !(**d > 0.0 && d.is_finite())) {
        return Err(Error::Numerical(format!("teacher produced depth {bad}")));
    }
    Ok(out.map(|d| (d as f64 * state.m) as f32))
}

/// The geometry model with a fourth input channel carrying the log prior.
/// Its point head predicts a multiplicative correction, so the output
/// depth is `exp(log_prior) · z`; with the last point conv zeroed the
/// teacher starts as the identity.
#[derive(Clone, Debug)]
pub struct ToyTeacher {
    model: Model,
}

pub const TEACHER_CORRECTION: &str = "head.point.conv2";

impl ToyTeacher {
    pub fn new(mut config: ModelConfig) -> Result<Self> {
        config.in_channels = 4;
        let mut model = Model::new(config)?;
        for suffix in ["weight", "bias"] {
            let p = model
                .param_mut(&format!("{TEACHER_CORRECTION}.{suffix}"))
                .expect("point head exists");
            p.data_mut().fill(0.0);
        }
        Ok(ToyTeacher { model })
    }

    pub fn from_model(model: Model) -> Result<Self> {
        if model.config().in_channels != 4 {
            return Err(Error::Config(format!(
                "teacher model needs 4 input channels, got {}",
                model.config().in_channels
            )));
        }
        Ok(ToyTeacher { model })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    fn input(frames: &Tensor, log_priors: &Tensor) -> Result<Tensor> {
        let [n, c, h, w] = dims4(frames)?;
        if c != 3 || log_priors.dims() != [n, h, w] {
            return Err(Error::shape(format!(
                "teacher wants [N×3×H×W] frames and [N×H×W] priors, got {:?} and {:?}",
                frames.dims(),
                log_priors.dims()
            )));
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * 4 * hw);
        for f in 0..n {
            data.extend_from_slice(&frames.data()[f * 3 * hw..(f + 1) * 3 * hw]);
            data.extend_from_slice(&log_priors.data()[f * hw..(f + 1) * hw]);
        }
        Tensor::new([n, 4, h, w], data)
    }

    /// Fits the correction on corrupted synthetic sequences with an L1 loss
    /// in log depth. Returns the per-step losses.
    pub fn train(&mut self, cfg: &TeacherTrainConfig) -> Result<Vec<f64>> {
        let samples = teacher_samples(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut adam = AdamW::new(cfg.lr);
        let mut losses = Vec::with_capacity(cfg.steps);
        for step in 0..cfg.steps {
            let s = &samples[rng.gen_range(0..samples.len())];
            let n = s.log_priors.dims()[0];
            let input = Self::input(&s.frames, &s.log_priors)?;
            let grads = {
                let mut g = Graph::new();
                let trace = self.model.forward_train(&mut g, &input, &ChunkPartition::full(n)?)?;
                let points = g.value(trace.points);
                let z = z_channel(points)?;
                let count = z.len() as f64;
                let hw = z.len() / n;
                let mut grad = Tensor::zeros(points.dims().to_vec());
                let mut loss = 0.0;
                for i in 0..z.len() {
                    let zi = z.data()[i] as f64;
                    let r = s.log_priors.data()[i] as f64 + zi.ln() - s.log_target.data()[i] as f64;
                    loss += r.abs();
                    let (f, p) = (i / hw, i % hw);
                    grad.data_mut()[(f * 3 + 2) * hw + p] = (r.signum() * (r != 0.0) as u8 as f64 / zi / count) as f32;
                }
                loss /= count;
                if !loss.is_finite() {
                    return Err(Error::Numerical(format!("teacher loss {loss} at step {step}")));
                }
                losses.push(loss);
                let grads = g.backward(vec![(trace.points, grad)])?;
                self.model.collect_grads(&trace, &grads)
            };
            if grads.iter().any(|t| !t.all_finite()) {
                return Err(Error::Numerical(format!("non-finite teacher gradient at step {step}")));
            }
            adam.step(self.model.params_mut(), &grads)?;
        }
        Ok(losses)
    }
}

impl CompletionModel for ToyTeacher {
    fn complete(&self, frames: &Tensor, log_priors: &Tensor) -> Result<Tensor> {
        let input = Self::input(frames, log_priors)?;
        let n = log_priors.dims()[0];
        let out = self.model.forward(&input, &ChunkPartition::full(n)?)?;
        out.depth.zip_map(log_priors, |z, lp| lp.exp() * z)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherTrainConfig {
    pub data: DataConfig,
    pub corruption: CorruptionConfig,
    pub refine: RefineConfig,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TeacherTrainConfig {
    fn default() -> Self {
        TeacherTrainConfig {
            data: DataConfig::default(),
            corruption: CorruptionConfig::default(),
            refine: RefineConfig::default(),
            steps: 150,
            lr: 1e-3,
            seed: 0,
        }
    }
}

struct Sample {
    frames: Tensor,
    log_priors: Tensor,
    log_target: Tensor,
}

fn teacher_samples(cfg: &TeacherTrainConfig) -> Result<Vec<Sample>> {
    if cfg.steps > 0 && !(cfg.lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    let scenes = cfg.data.generate()?;
    scenes
        .iter()
        .enumerate()
        .map(|(i, scene)| {
            let c = corrupt_scene(scene, &cfg.corruption, cfg.seed.wrapping_add(i as u64))?;
            let (filtered, _, priors) = densify(&c.raw, &c.mono, &cfg.refine)?;
            let (log_priors, state) = normalize_sequence(&priors, &filtered)?;
            let log_target = scene.depth.map(|d| (d as f64 / state.m).ln() as f32);
            Ok(Sample {
                frames: scene.frames.clone(),
                log_priors,
                log_target,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            patch_size: 4,
            width: 16,
            heads: 2,
            backbone_layers: 3,
            decoder_layers: 1,
            feature_channels: 4,
            head_hidden: 4,
            ..Default::default()
        }
    }

    #[test]
    fn untrained_toy_teacher_is_identity() {
        let t = ToyTeacher::new(tiny()).unwrap();
        let frames = Tensor::from_fn([2, 3, 8, 8], |i| (i % 7) as f32 / 7.0);
        let lp = Tensor::from_fn([2, 8, 8], |i| (i % 5) as f32 * 0.1 - 0.2);
        let out = t.complete(&frames, &lp).unwrap();
        for (a, b) in out.data().iter().zip(lp.data()) {
            assert!((a - b.exp()).abs() <= 1e-6 * b.exp());
        }
    }

    #[test]
    fn identity_teacher_restores_priors() {
        let priors = Tensor::from_fn([2, 4, 4], |i| 1.0 + i as f32 * 0.25);
        let state = NormalizationState { m: 2.0 };
        let lp = priors.map(|p| (p / 2.0).ln());
        let out = complete_sequence(&Tensor::zeros([2, 3, 4, 4]), &lp, &state, &IdentityTeacher).unwrap();
        assert!(out.max_abs_diff(&priors).unwrap() <= 1e-5);
        assert!(complete_sequence(&Tensor::zeros([2, 3, 4, 5]), &lp, &state, &IdentityTeacher).is_err());
    }

    #[test]
    fn short_teacher_training_lowers_loss() {
        let cfg = TeacherTrainConfig {
            data: DataConfig {
                sequences: 2,
                frames: 2,
                height: 16,
                width: 16,
                ..Default::default()
            },
            steps: 30,
            ..Default::default()
        };
        let mut t = ToyTeacher::new(tiny()).unwrap();
        let losses = t.train(&cfg).unwrap();
        assert_eq!(losses.len(), 30);
        assert!(losses.iter().all(|l| l.is_finite()));
        let head: f64 = losses[..5].iter().sum();
        let tail: f64 = losses[25..].iter().sum();
        assert!(tail <= head, "{head} -> {tail}");
    }
}
