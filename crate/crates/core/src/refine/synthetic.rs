use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SparseDepth;
use crate::error::{Error, Result};
use crate::geometry::{SceneData, ValidMask};
use crate::tensor::Tensor;

/// Planted corruption of a rendered depth sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorruptionConfig {
    /// Fraction of pixels dropped from the sparse input.
    pub holes: f64,
    /// Fraction of surviving pixels replaced by gross outliers, half scaled
    /// by U(2, 5) and half by U(0.2, 0.5).
    pub outliers: f64,
    /// Relative uniform noise on every surviving pixel.
    pub noise: f64,
    /// Amplitude of the horizontal ripple on the monocular prior.
    pub mono_ripple: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            holes: 0.3,
            outliers: 0.05,
            noise: 0.01,
            mono_ripple: 0.03,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CorruptedScene {
    pub raw: SparseDepth,
    /// Affine-distorted relative depth, `(gt − 1)/2` with a ripple.
    pub mono: Tensor,
    /// Which surviving pixels were planted outliers.
    pub outlier: ValidMask,
}

pub fn corrupt_scene(scene: &SceneData, cfg: &CorruptionConfig, seed: u64) -> Result<CorruptedScene> {
    for (name, f) in [("holes", cfg.holes), ("outliers", cfg.outliers)] {
        if !(0.0..1.0).contains(&f) {
            return Err(Error::Config(format!("{name} fraction must be in [0, 1), got {f}")));
        }
    }
    if !(0.0..0.5).contains(&cfg.noise) {
        return Err(Error::Config(format!("noise must be in [0, 0.5), got {}", cfg.noise)));
    }
    let gt = &scene.depth;
    let dims = gt.dims().to_vec();
    let w = *dims.last().expect("depth is 3-D");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut valid = scene.valid.bits().to_vec();
    let mut outlier = vec![false; gt.len()];
    let mut values = gt.data().to_vec();
    for i in 0..values.len() {
        if !valid[i] {
            values[i] = 0.0;
            continue;
        }
        if rng.gen_bool(cfg.holes) {
            valid[i] = false;
            values[i] = 0.0;
            continue;
        }
        let k = if rng.gen_bool(cfg.outliers) {
            outlier[i] = true;
            if rng.gen_bool(0.5) {
                rng.gen_range(2.0..5.0)
            } else {
                rng.gen_range(0.2..0.5)
            }
        } else {
            1.0 + rng.gen_range(-cfg.noise..=cfg.noise)
        };
        values[i] = (values[i] as f64 * k) as f32;
    }
    let mono = Tensor::from_fn(dims.clone(), |i| {
        let u = (i % w) as f64;
        let ripple = 1.0 + cfg.mono_ripple * (2.0 * std::f64::consts::PI * u / w as f64).sin();
        ((gt.data()[i] as f64 - 1.0) / 2.0 * ripple) as f32
    });
    Ok(CorruptedScene {
        raw: SparseDepth::new(Tensor::new(dims.clone(), values)?, ValidMask::new(dims.clone(), valid)?)?,
        mono,
        outlier: ValidMask::new(dims, outlier)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{synth_scene, SceneKind, SceneSpec};

    #[test]
    fn fractions_are_roughly_planted() {
        let scene = synth_scene(&SceneSpec::new(SceneKind::Plane, 2, 32, 32), 0).unwrap();
        let c = corrupt_scene(&scene, &CorruptionConfig::default(), 1).unwrap();
        let n = 2.0 * 32.0 * 32.0;
        let kept = c.raw.valid.count() as f64 / n;
        assert!((kept - 0.7).abs() < 0.05, "kept {kept}");
        let out = c.outlier.count() as f64 / c.raw.valid.count() as f64;
        assert!((out - 0.05).abs() < 0.02, "outliers {out}");
        assert_eq!(c.outlier.and(&c.raw.valid).unwrap().count(), c.outlier.count());
        let again = corrupt_scene(&scene, &CorruptionConfig::default(), 1).unwrap();
        assert_eq!(again.raw, c.raw);
    }
}
