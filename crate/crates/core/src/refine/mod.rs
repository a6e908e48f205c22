//! Pseudo-label refinement for sparse or noisy depth: outlier filtering
//! against a monocular prior, screened Poisson densification in the log
//! domain, median-log normalization and a completion teacher.

mod synthetic;
mod teacher;

pub use synthetic::{corrupt_scene, CorruptionConfig, CorruptedScene};
pub use teacher::{complete_sequence, CompletionModel, IdentityTeacher, TeacherTrainConfig, ToyTeacher};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::ValidMask;
use crate::metrics::lower_median;
use crate::tensor::Tensor;

/// Sparse depth of one or more frames (`[N×H×W]` or `[H×W]`). Values are
/// meaningful only where `valid` is set.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseDepth {
    pub values: Tensor,
    pub valid: ValidMask,
}

impl SparseDepth {
    pub fn new(values: Tensor, valid: ValidMask) -> Result<Self> {
        if values.dims() != valid.dims() {
            return Err(Error::shape(format!(
                "sparse values {:?} vs mask {:?}",
                values.dims(),
                valid.dims()
            )));
        }
        if !matches!(values.rank(), 2 | 3) {
            return Err(Error::shape(format!("sparse depth must be 2-D or 3-D, got {:?}", values.dims())));
        }
        for (v, &ok) in values.data().iter().zip(valid.bits()) {
            if ok && !(*v > 0.0 && v.is_finite()) {
                return Err(Error::Contract(format!("sparse depth {v} on a valid pixel")));
            }
        }
        Ok(SparseDepth { values, valid })
    }

    /// `(frames, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        match *self.values.dims() {
            [h, w] => (1, h, w),
            [n, h, w] => (n, h, w),
            _ => unreachable!("checked in new"),
        }
    }

    pub fn frame(&self, i: usize) -> SparseDepth {
        let (_, h, w) = self.shape();
        let values = self.values.slice_rows(i, i + 1).reshape([h, w]).expect("same size");
        let valid = ValidMask::new([h, w], self.valid.slice_rows(i, i + 1).bits().to_vec()).expect("same size");
        SparseDepth { values, valid }
    }

    /// `D_raw ⊙ M_valid`.
    pub fn masked(&self) -> Tensor {
        Tensor::from_fn(self.values.dims().to_vec(), |i| {
            if self.valid.bits()[i] {
                self.values.data()[i]
            } else {
                0.0
            }
        })
    }
}

fn frames_of(t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.dims() {
        [h, w] => Ok((1, h, w)),
        [n, h, w] => Ok((n, h, w)),
        ref d => Err(Error::shape(format!("expected [H×W] or [N×H×W], got {d:?}"))),
    }
}

/// Drops sparse pixels that disagree with the locally aligned monocular
/// prior.
///
/// Around each valid pixel the local scale is the lower median of
/// `raw / mono` over valid pixels of the `k×k` window with positive `mono`.
/// The pixel is dropped when `|raw − s·mono| / raw > tau` or when the window
/// holds fewer than 5 usable samples. Ratios of depths along a ray equal the
/// ratios of ray distances, so no intrinsics are needed.
pub fn filter_outliers(raw: &SparseDepth, mono: &Tensor, k: usize, tau: f64) -> Result<SparseDepth> {
    if k < 3 || k.is_multiple_of(2) {
        return Err(Error::Config(format!("window must be odd and at least 3, got {k}")));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    if raw.values.dims() != mono.dims() {
        return Err(Error::shape(format!("raw {:?} vs mono {:?}", raw.values.dims(), mono.dims())));
    }
    let (n, h, w) = raw.shape();
    let r = k / 2;
    let hw = h * w;
    let rv = raw.values.data();
    let mv = mono.data();
    let ok = raw.valid.bits();
    let mut out = raw.valid.clone();
    let mut ratios = Vec::with_capacity(k * k);
    for f in 0..n {
        for v in 0..h {
            for u in 0..w {
                let i = f * hw + v * w + u;
                if !ok[i] {
                    continue;
                }
                ratios.clear();
                for vv in v.saturating_sub(r)..(v + r + 1).min(h) {
                    for uu in u.saturating_sub(r)..(u + r + 1).min(w) {
                        let j = f * hw + vv * w + uu;
                        if ok[j] && mv[j] > 0.0 {
                            ratios.push(rv[j] as f64 / mv[j] as f64);
                        }
                    }
                }
                let keep = ratios.len() >= 5 && {
                    let s = lower_median(&mut ratios).expect("non-empty");
                    let raw_i = rv[i] as f64;
                    (raw_i - s * mv[i] as f64).abs() / raw_i <= tau
                };
                if !keep {
                    out.bits_mut()[i] = false;
                }
            }
        }
    }
    Ok(SparseDepth {
        values: raw.values.clone(),
        valid: out,
    })
}

pub const GAMMA_EPS: f64 = 1e-4;

/// Shift for the monocular prior from a least-squares fit
/// `a·mono + b ≈ sparse` on valid pixels: `γ = max(b/a, 0) + ε`. A
/// non-positive slope falls back to `max(ε, ε − min(mono))`. The result is
/// raised if needed so that `mono + γ > 0` everywhere.
pub fn derive_gamma(mono: &Tensor, sparse: &SparseDepth) -> Result<f64> {
    if mono.dims() != sparse.values.dims() {
        return Err(Error::shape(format!("mono {:?} vs sparse {:?}", mono.dims(), sparse.values.dims())));
    }
    let min_mono = mono.data().iter().fold(f64::INFINITY, |m, &x| m.min(x as f64));
    let floor = GAMMA_EPS - min_mono;
    let fit = crate::metrics::align_affine(mono, &sparse.values, &sparse.valid);
    let gamma = match fit {
        Ok((a, b)) if a > 0.0 => (b / a).max(0.0) + GAMMA_EPS,
        Ok(_) | Err(Error::Degenerate(_)) => GAMMA_EPS.max(floor),
        Err(Error::Empty(_)) => {
            return Err(Error::Empty(format!(
                "gamma needs 2 valid sparse pixels, got {}",
                sparse.valid.count()
            )))
        }
        Err(e) => return Err(e),
    };
    Ok(gamma.max(floor))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoissonConfig {
    /// Weight of the data term.
    pub lambda: f64,
    /// Shift added to the monocular prior.
    pub gamma: f64,
    pub cg_tol: f64,
    /// Defaults to `10·H·W` when `None`.
    pub cg_max_iter: Option<usize>,
}

impl Default for PoissonConfig {
    fn default() -> Self {
        PoissonConfig {
            lambda: 10.0,
            gamma: 0.0,
            cg_tol: 1e-6,
            cg_max_iter: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PoissonResult {
    /// `[H×W]`, strictly positive.
    pub prior: Tensor,
    pub iterations: usize,
    /// Final `‖rhs − A·u‖ / ‖rhs‖`.
    pub relative_residual: f64,
}

/// The normal equations `(L + λM) u = L v + λM·log D̃` on the 4-neighbour
/// grid, `L` the graph Laplacian and `M` the valid-pixel indicator.
pub struct PoissonSystem {
    h: usize,
    w: usize,
    lambda: f64,
    mask: Vec<bool>,
    rhs: Vec<f64>,
    v: Vec<f64>,
}

impl PoissonSystem {
    pub fn new(filtered: &SparseDepth, mono: &Tensor, lambda: f64, gamma: f64) -> Result<Self> {
        let (n, h, w) = filtered.shape();
        if n != 1 {
            return Err(Error::shape(format!("Poisson prior is per frame, got {n} frames")));
        }
        if frames_of(mono)? != (1, h, w) {
            return Err(Error::shape(format!("mono {:?} vs sparse {:?}", mono.dims(), filtered.values.dims())));
        }
        if !(lambda > 0.0 && lambda.is_finite()) || !(gamma >= 0.0) {
            return Err(Error::Config(format!("need lambda > 0 and gamma ≥ 0, got {lambda}, {gamma}")));
        }
        let mask = filtered.valid.bits().to_vec();
        if !mask.iter().any(|&b| b) {
            return Err(Error::Empty("Poisson prior needs at least one valid sparse pixel".into()));
        }
        let v = mono
            .data()
            .iter()
            .map(|&m| {
                let s = m as f64 + gamma;
                if s > 0.0 {
                    Ok(s.ln())
                } else {
                    Err(Error::Contract(format!("mono + gamma = {s} is not positive")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        let mut sys = PoissonSystem {
            h,
            w,
            lambda,
            mask,
            rhs: Vec::new(),
            v,
        };
        let mut rhs = sys.laplacian(&sys.v);
        for (i, r) in rhs.iter_mut().enumerate() {
            if sys.mask[i] {
                *r += lambda * (filtered.values.data()[i] as f64).ln();
            }
        }
        sys.rhs = rhs;
        Ok(sys)
    }

    pub fn len(&self) -> usize {
        self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    fn laplacian(&self, x: &[f64]) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let mut out = vec![0.0; h * w];
        for v in 0..h {
            for u in 0..w {
                let i = v * w + u;
                let mut acc = 0.0;
                if u > 0 {
                    acc += x[i] - x[i - 1];
                }
                if u + 1 < w {
                    acc += x[i] - x[i + 1];
                }
                if v > 0 {
                    acc += x[i] - x[i - w];
                }
                if v + 1 < h {
                    acc += x[i] - x[i + w];
                }
                out[i] = acc;
            }
        }
        out
    }

    /// `(L + λM)·x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.laplacian(x);
        for (i, o) in out.iter_mut().enumerate() {
            if self.mask[i] {
                *o += self.lambda * x[i];
            }
        }
        out
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        (0..h * w)
            .map(|i| {
                let (v, u) = (i / w, i % w);
                let deg = (u > 0) as usize + (u + 1 < w) as usize + (v > 0) as usize + (v + 1 < h) as usize;
                deg as f64 + if self.mask[i] { self.lambda } else { 0.0 }
            })
            .collect()
    }

    /// Dense copy of the system matrix, for small instances and tests.
    pub fn dense(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        (0..n)
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                self.apply(&e)
            })
            .collect()
    }

    /// Jacobi-preconditioned conjugate gradient from `x0` until
    /// `‖rhs − A·x‖ ≤ tol·‖rhs‖`.
    pub fn solve_cg(&self, x0: Vec<f64>, tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize, f64)> {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let rhs_norm = dot(&self.rhs, &self.rhs).sqrt();
        let target = tol * rhs_norm;
        let inv_diag: Vec<f64> = self.diagonal().iter().map(|d| 1.0 / d).collect();
        let mut x = x0;
        let ax = self.apply(&x);
        let mut r: Vec<f64> = self.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let mut rn = dot(&r, &r).sqrt();
        let rel = |rn: f64| if rhs_norm > 0.0 { rn / rhs_norm } else { rn };
        if rn <= target {
            return Ok((x, 0, rel(rn)));
        }
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for it in 1..=max_iter {
            let ap = self.apply(&p);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::Numerical(format!("CG breakdown at iteration {it}: pᵀAp = {pap}")));
            }
            let alpha = rz / pap;
            for i in 0..x.len() {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            rn = dot(&r, &r).sqrt();
            if rn <= target {
                // report the true residual, not the recursively updated one
                let ax = self.apply(&x);
                let true_rn = self.rhs.iter().zip(&ax).map(|(b, a)| (b - a) * (b - a)).sum::<f64>().sqrt();
                if true_rn <= target {
                    return Ok((x, it, rel(true_rn)));
                }
                r = self.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            }
            z = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..p.len() {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::NoConvergence {
            iterations: max_iter,
            residual: rn,
            target,
        })
    }

    /// Warm start: the monocular log depth shifted to match the mean
    /// observed log depth.
    pub fn initial_guess(&self, filtered: &SparseDepth) -> Vec<f64> {
        let (mut acc, mut n) = (0.0, 0usize);
        for (i, &ok) in self.mask.iter().enumerate() {
            if ok {
                acc += (filtered.values.data()[i] as f64).ln() - self.v[i];
                n += 1;
            }
        }
        let shift = acc / n as f64;
        self.v.iter().map(|x| x + shift).collect()
    }
}

/// Dense depth whose log-gradients follow `log(mono + γ)` while matching
/// the filtered sparse depth on valid pixels, solved in the log domain.
pub fn poisson_prior(filtered: &SparseDepth, mono: &Tensor, config: &PoissonConfig) -> Result<PoissonResult> {
    let sys = PoissonSystem::new(filtered, mono, config.lambda, config.gamma)?;
    let max_iter = config.cg_max_iter.unwrap_or(10 * sys.len());
    let x0 = sys.initial_guess(filtered);
    let (u, iterations, relative_residual) = sys.solve_cg(x0, config.cg_tol, max_iter)?;
    let data: Vec<f32> = u.iter().map(|x| x.exp() as f32).collect();
    if data.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::Numerical("Poisson prior left the positive finite range".into()));
    }
    Ok(PoissonResult {
        prior: Tensor::new([sys.h, sys.w], data)?,
        iterations,
        relative_residual,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationState {
    pub m: f64,
}

/// `log(prior / m)` with `m` the lower median of all valid sparse values in
/// the sequence.
pub fn normalize_sequence(priors: &Tensor, sparse: &SparseDepth) -> Result<(Tensor, NormalizationState)> {
    if priors.dims() != sparse.values.dims() {
        return Err(Error::shape(format!("priors {:?} vs sparse {:?}", priors.dims(), sparse.values.dims())));
    }
    let mut vals: Vec<f64> = sparse
        .values
        .data()
        .iter()
        .zip(sparse.valid.bits())
        .filter(|(_, &ok)| ok)
        .map(|(&v, _)| v as f64)
        .collect();
    let m = lower_median(&mut vals).ok_or_else(|| Error::Empty("no valid sparse depth in the sequence".into()))?;
    if let Some(bad) = priors.data().iter().find(|p| !(**p > 0.0)) {
        return Err(Error::Contract(format!("prior {bad} is not positive")));
    }
    let out = priors.map(|p| (p as f64 / m).ln() as f32);
    Ok((out, NormalizationState { m }))
}

pub fn denormalize(log_priors: &Tensor, state: &NormalizationState) -> Tensor {
    log_priors.map(|x| ((x as f64).exp() * state.m) as f32)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineConfig {
    pub window: usize,
    pub tau: f64,
    pub poisson: PoissonConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            window: 7,
            tau: 0.15,
            poisson: PoissonConfig::default(),
        }
    }
}

/// Everything the pipeline produced, stage by stage.
#[derive(Clone, Debug)]
pub struct RefineOutput {
    pub filtered: SparseDepth,
    pub gammas: Vec<f64>,
    /// `[N×H×W]` dense Poisson priors.
    pub priors: Tensor,
    pub log_priors: Tensor,
    pub state: NormalizationState,
    /// `[N×H×W]`, dense.
    pub pseudo_labels: Tensor,
}

/// Outlier filtering, per-frame γ and Poisson prior, sequence
/// normalization and teacher completion, in that order. The Poisson
/// stage takes γ from [`derive_gamma`], overriding `config.poisson.gamma`.
pub fn densify(raw: &SparseDepth, mono: &Tensor, config: &RefineConfig) -> Result<(SparseDepth, Vec<f64>, Tensor)> {
    let (n, h, w) = raw.shape();
    let raw = SparseDepth {
        values: raw.values.clone().reshape([n, h, w])?,
        valid: ValidMask::new([n, h, w], raw.valid.bits().to_vec())?,
    };
    let mono = mono.clone().reshape([n, h, w]).map_err(|_| {
        Error::shape(format!("mono {:?} vs raw [{n}, {h}, {w}]", mono.dims()))
    })?;
    let filtered = filter_outliers(&raw, &mono, config.window, config.tau)?;
    let frame = |f: usize| -> Result<(f64, Tensor)> {
        let sf = filtered.frame(f);
        let mf = mono.slice_rows(f, f + 1).reshape([h, w])?;
        let gamma = derive_gamma(&mf, &sf)?;
        let cfg = PoissonConfig { gamma, ..config.poisson };
        Ok((gamma, poisson_prior(&sf, &mf, &cfg)?.prior))
    };
    let per_frame = if crate::deterministic() {
        (0..n).map(frame).collect::<Result<Vec<_>>>()?
    } else {
        (0..n).into_par_iter().map(frame).collect::<Result<Vec<_>>>()?
    };
    let gammas = per_frame.iter().map(|(g, _)| *g).collect();
    let priors: Vec<f32> = per_frame.iter().flat_map(|(_, p)| p.data().iter().copied()).collect();
    Ok((filtered, gammas, Tensor::new([n, h, w], priors)?))
}

pub fn refine_pipeline(
    frames: &Tensor,
    raw: &SparseDepth,
    mono: &Tensor,
    config: &RefineConfig,
    teacher: &dyn CompletionModel,
) -> Result<RefineOutput> {
    let (filtered, gammas, priors) = densify(raw, mono, config)?;
    let (log_priors, state) = normalize_sequence(&priors, &filtered)?;
    let pseudo_labels = complete_sequence(frames, &log_priors, &state, teacher)?;
    Ok(RefineOutput {
        filtered,
        gammas,
        priors,
        log_priors,
        state,
        pseudo_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sparse(values: Tensor, valid: Vec<bool>) -> SparseDepth {
        let dims = values.dims().to_vec();
        SparseDepth::new(values, ValidMask::new(dims, valid).unwrap()).unwrap()
    }

    fn smooth(h: usize, w: usize) -> Tensor {
        Tensor::from_fn([h, w], |i| {
            let (v, u) = ((i / w) as f32, (i % w) as f32);
            2.0 + 0.3 * (0.4 * u).sin() + 0.2 * (0.3 * v).cos()
        })
    }

    #[test]
    fn filter_keeps_consistent_and_flags_spike() {
        let mono = smooth(12, 12);
        let raw = sparse(mono.scale(3.0), vec![true; 144]);
        let f = filter_outliers(&raw, &mono, 7, 0.15).unwrap();
        assert_eq!(f.valid, raw.valid);
        let mut spiked = raw.values.clone();
        spiked.data_mut()[5 * 12 + 6] *= 10.0;
        let f = filter_outliers(&sparse(spiked, vec![true; 144]), &mono, 7, 0.15).unwrap();
        assert_eq!(f.valid.count(), 143);
        assert!(!f.valid.bits()[5 * 12 + 6]);
        let none = sparse(mono.clone(), vec![false; 144]);
        assert_eq!(filter_outliers(&none, &mono, 7, 0.15).unwrap().valid.count(), 0);
        assert!(filter_outliers(&none, &mono, 4, 0.15).is_err());
    }

    #[test]
    fn gamma_examples() {
        let mono = smooth(6, 6);
        let g = derive_gamma(&mono, &sparse(mono.clone(), vec![true; 36])).unwrap();
        assert!((g - GAMMA_EPS).abs() < 1e-6);
        let g = derive_gamma(&mono, &sparse(mono.map(|x| x + 2.0), vec![true; 36])).unwrap();
        assert!((g - (2.0 + GAMMA_EPS)).abs() < 1e-4);
        let one = sparse(mono.clone(), (0..36).map(|i| i == 0).collect());
        assert!(matches!(derive_gamma(&mono, &one), Err(Error::Empty(_))));
        // decreasing relation falls back to the positivity floor
        let flipped = sparse(mono.map(|x| 10.0 - x), vec![true; 36]);
        let g = derive_gamma(&mono, &flipped).unwrap();
        assert!(mono.data().iter().all(|&m| m as f64 + g > 0.0));
    }

    #[test]
    fn poisson_reproduces_consistent_mono() {
        let mono = smooth(10, 10);
        let gamma = 0.5;
        let target = mono.map(|m| m + 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for lambda in [0.1, 10.0, 1e4] {
            let valid = (0..100).map(|_| rng.gen_bool(0.3)).collect();
            let cfg = PoissonConfig {
                lambda,
                gamma,
                ..Default::default()
            };
            let out = poisson_prior(&sparse(target.clone(), valid), &mono, &cfg).unwrap();
            for (a, b) in out.prior.data().iter().zip(target.data()) {
                assert!(((a - b) / b).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn constant_mono_single_observation_fills_level() {
        let mono = Tensor::full([7, 9], 1.0);
        let mut values = Tensor::full([7, 9], 1.0);
        values.data_mut()[20] = 4.5;
        let valid = (0..63).map(|i| i == 20).collect();
        let out = poisson_prior(&sparse(values, valid), &mono, &PoissonConfig::default()).unwrap();
        assert!(out.prior.data().iter().all(|&d| ((d - 4.5) / 4.5).abs() <= 1e-5));
    }

    #[test]
    fn poisson_errors() {
        let mono = Tensor::full([4, 4], 1.0);
        let none = sparse(mono.clone(), vec![false; 16]);
        assert!(matches!(
            poisson_prior(&none, &mono, &PoissonConfig::default()),
            Err(Error::Empty(_))
        ));
        let some = sparse(mono.clone(), vec![true; 16]);
        let cfg = PoissonConfig {
            gamma: 0.0,
            ..Default::default()
        };
        assert!(poisson_prior(&some, &mono.map(|x| x - 2.0), &cfg).is_err());
        // two conflicting observations on a rough mono: one CG step is not enough
        let rough = Tensor::from_fn([8, 8], |i| 1.0 + (i * 7 % 5) as f32);
        let mut values = rough.clone();
        values.data_mut()[0] = 50.0;
        let one = sparse(values, (0..64).map(|i| i == 0 || i == 63).collect());
        let cfg = PoissonConfig {
            cg_max_iter: Some(1),
            ..Default::default()
        };
        assert!(matches!(
            poisson_prior(&one, &rough, &cfg),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn normalization_examples() {
        let priors = Tensor::full([2, 3, 3], 5.0);
        let sp = sparse(Tensor::full([2, 3, 3], 5.0), vec![true; 18]);
        let (out, st) = normalize_sequence(&priors, &sp).unwrap();
        assert_eq!(st.m, 5.0);
        assert!(out.data().iter().all(|&x| x == 0.0));
        let vals = Tensor::new([1, 1, 5], vec![1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        let sp = sparse(vals.clone(), vec![true; 5]);
        let (out, st) = normalize_sequence(&vals, &sp).unwrap();
        assert_eq!(st.m, 3.0);
        let back = denormalize(&out, &st);
        for (a, b) in back.data().iter().zip(vals.data()) {
            assert!(((a - b) / b).abs() <= 2.0 * f32::EPSILON);
        }
        assert!(normalize_sequence(&vals, &sparse(vals.clone(), vec![false; 5])).is_err());
    }

    #[test]
    fn clean_input_round_trips_through_pipeline() {
        let n = 2;
        let mono = Tensor::from_fn([n, 12, 12], |i| {
            let (v, u) = (((i / 12) % 12) as f32, (i % 12) as f32);
            1.0 + 0.05 * u + 0.03 * v + 0.2 * (i / 144) as f32
        });
        let raw_vals = mono.scale(2.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let valid: Vec<bool> = (0..n * 144).map(|_| rng.gen_bool(0.6)).collect();
        let raw = sparse(raw_vals.clone(), valid.clone());
        let frames = Tensor::zeros([n, 3, 12, 12]);
        let out = refine_pipeline(&frames, &raw, &mono, &RefineConfig::default(), &IdentityTeacher).unwrap();
        assert_eq!(out.pseudo_labels.dims(), &[n, 12, 12]);
        for i in 0..n * 144 {
            let (p, r) = (out.pseudo_labels.data()[i], raw_vals.data()[i]);
            assert!(p > 0.0 && p.is_finite());
            if valid[i] {
                assert!(((p - r) / r).abs() <= 1e-3, "pixel {i}: {p} vs {r}");
            }
        }
        // doubling the sparse input doubles m and the pseudo-labels
        let raw2 = sparse(raw_vals.scale(2.0), valid);
        let out2 = refine_pipeline(&frames, &raw2, &mono, &RefineConfig::default(), &IdentityTeacher).unwrap();
        assert!((out2.state.m - 2.0 * out.state.m).abs() <= 1e-5 * out.state.m);
        for (a, b) in out2.pseudo_labels.data().iter().zip(out.pseudo_labels.data()) {
            assert!((a - 2.0 * b).abs() <= 1e-4 * b);
        }
    }
}
