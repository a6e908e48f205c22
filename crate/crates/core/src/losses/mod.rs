//! Scale-aligned point loss, angular normal losses and their gradients.
//!
//! All losses are averaged over the pixels they count and return the
//! gradient with respect to the prediction alongside the value.

mod train;

pub use train::{
    partition_for_step, targets_of, train_model, train_toy, AdamW, DataConfig, StepRecord, TrainOptions,
    TrainingLog,
};

use crate::error::{Error, Result};
use crate::geometry::{cross, stencil, tangents, ValidMask};
use crate::model::GeometryOutput;
use crate::autograd::dims4;
use crate::tensor::{lit, Real, Tensor};

/// Cosines within this distance of ±1 get a zero angular gradient.
pub const COS_CLAMP: f64 = 1e-7;
pub const SCALE_MIN: f64 = 1e-6;
pub const SCALE_MAX: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_points_normal: f64,
    pub lambda_normal: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_points_normal: 1.0,
            lambda_normal: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_points_normal", self.lambda_points_normal),
            ("lambda_normal", self.lambda_normal),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleAlignment {
    pub s: f64,
}

/// Value, gradient with respect to the prediction, and the number of
/// pixels skipped because their prediction was degenerate.
#[derive(Clone, Debug)]
pub struct LossValue<T: Real = f32> {
    pub loss: T,
    pub grad: Tensor<T>,
    pub excluded: usize,
}

fn check_maps<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, valid: &ValidMask) -> Result<[usize; 4]> {
    pred.check_same_dims(gt)?;
    let [n, c, h, w] = dims4(pred)?;
    if c != 3 {
        return Err(Error::shape(format!("expected 3 channels, got {c}")));
    }
    if valid.dims() != [n, h, w] {
        return Err(Error::shape(format!(
            "valid mask {:?} does not match maps {:?}",
            valid.dims(),
            pred.dims()
        )));
    }
    Ok([n, c, h, w])
}

fn check_depth<T: Real>(gt_depth: &Tensor<T>, valid: &ValidMask) -> Result<()> {
    if gt_depth.dims() != valid.dims() {
        return Err(Error::shape(format!(
            "gt depth {:?} does not match mask {:?}",
            gt_depth.dims(),
            valid.dims()
        )));
    }
    for (d, &ok) in gt_depth.data().iter().zip(valid.bits()) {
        if ok && !(*d > T::zero() && d.is_finite()) {
            return Err(Error::Contract(format!("gt depth {d} on a valid pixel")));
        }
    }
    Ok(())
}

/// Weighted median: the smallest value whose cumulative weight reaches
/// half the total. Minimizes `Σ w_k |s − r_k|`.
pub fn weighted_median(mut pairs: Vec<(f64, f64)>) -> Option<f64> {
    pairs.retain(|&(_, w)| w > 0.0);
    if pairs.is_empty() {
        return None;
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for &(r, w) in &pairs {
        acc += w;
        if acc >= 0.5 * total {
            return Some(r);
        }
    }
    pairs.last().map(|p| p.0)
}

/// Exact minimizer over `s > 0` of `Σ_valid (1/D̂) ‖s·P − P̂‖₁`.
///
/// Every scalar component contributes `(|P_k|/D̂)·|s − P̂_k/P_k|`, so the
/// optimum is the weighted median of the ratios. Components with `P_k = 0`
/// are constant in `s` and skipped. The result is clamped to
/// `[SCALE_MIN, SCALE_MAX]`.
pub fn solve_scale<T: Real>(
    pred: &Tensor<T>,
    gt: &Tensor<T>,
    gt_depth: &Tensor<T>,
    valid: &ValidMask,
) -> Result<ScaleAlignment> {
    let [n, _, h, w] = check_maps(pred, gt, valid)?;
    check_depth(gt_depth, valid)?;
    let hw = h * w;
    let mut pairs = Vec::new();
    let mut any = false;
    for f in 0..n {
        for px in 0..hw {
            if !valid.bits()[f * hw + px] {
                continue;
            }
            any = true;
            let inv_d = 1.0 / gt_depth.data()[f * hw + px].to_f64().unwrap();
            for c in 0..3 {
                let i = (f * 3 + c) * hw + px;
                let p = pred.data()[i].to_f64().unwrap();
                if p != 0.0 {
                    pairs.push((gt.data()[i].to_f64().unwrap() / p, p.abs() * inv_d));
                }
            }
        }
    }
    if !any {
        return Err(Error::Empty("scale alignment has no valid pixels".into()));
    }
    let s = weighted_median(pairs)
        .ok_or_else(|| Error::Degenerate("every predicted component is zero".into()))?;
    Ok(ScaleAlignment {
        s: s.clamp(SCALE_MIN, SCALE_MAX),
    })
}

/// `Σ (1/D̂)|s·P − P̂|` divided by the valid-pixel count, for a given `s`.
pub fn aligned_l1<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, gt_depth: &Tensor<T>, valid: &ValidMask, s: f64) -> f64 {
    let hw = gt_depth.len() / valid.dims()[0].max(1);
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &ok) in valid.bits().iter().enumerate() {
        if !ok {
            continue;
        }
        count += 1;
        let (f, px) = (i / hw, i % hw);
        let inv_d = 1.0 / gt_depth.data()[i].to_f64().unwrap();
        for c in 0..3 {
            let j = (f * 3 + c) * hw + px;
            sum += inv_d * (s * pred.data()[j].to_f64().unwrap() - gt.data()[j].to_f64().unwrap()).abs();
        }
    }
    sum / count.max(1) as f64
}

fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Scale-aligned, depth-weighted L1 point loss. The gradient treats the
/// alignment scale as a constant and uses `sign(0) = 0`.
pub fn points_loss<T: Real>(
    pred: &Tensor<T>,
    gt: &Tensor<T>,
    gt_depth: &Tensor<T>,
    valid: &ValidMask,
) -> Result<LossValue<T>> {
    let s = solve_scale(pred, gt, gt_depth, valid)?.s;
    let [n, _, h, w] = dims4(pred)?;
    let hw = h * w;
    let count = valid.count();
    let st = lit::<T>(s);
    let norm = lit::<T>(1.0 / count as f64);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(pred.dims().to_vec());
    for f in 0..n {
        for px in 0..hw {
            if !valid.bits()[f * hw + px] {
                continue;
            }
            let inv_d = T::one() / gt_depth.data()[f * hw + px];
            for c in 0..3 {
                let i = (f * 3 + c) * hw + px;
                let r = st * pred.data()[i] - gt.data()[i];
                loss = loss + inv_d * r.abs();
                grad.data_mut()[i] = norm * inv_d * st * sign(r);
            }
        }
    }
    Ok(LossValue {
        loss: loss * norm,
        grad,
        excluded: 0,
    })
}

/// Angle between `a` and `b` and its gradient with respect to `a`.
/// `None` when either vector has zero length.
pub(crate) fn angle_and_grad<T: Real>(a: [T; 3], b: [T; 3]) -> Option<(T, [T; 3])> {
    let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    if !(na > T::zero() && nb > T::zero()) || !na.is_finite() || !nb.is_finite() {
        return None;
    }
    let dotp = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let cos = dotp / (na * nb);
    let lo = lit::<T>(-1.0 + COS_CLAMP);
    let hi = lit::<T>(1.0 - COS_CLAMP);
    // atan2 keeps the value exact at 0 and π; the clamp only bounds the
    // gradient, which is zero once the cosine saturates
    let cr = cross(a, b);
    let theta = (cr[0] * cr[0] + cr[1] * cr[1] + cr[2] * cr[2]).sqrt().atan2(dotp);
    if cos <= lo || cos >= hi {
        return Some((theta, [T::zero(); 3]));
    }
    let dtheta = -T::one() / (T::one() - cos * cos).sqrt();
    let g = [0, 1, 2].map(|k| dtheta * (b[k] / (na * nb) - cos * a[k] / (na * na)));
    Some((theta, g))
}

/// Mean angular error between predicted and ground-truth normal maps.
/// Zero-length predictions are excluded from the mean and counted.
pub fn normal_loss<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, valid: &ValidMask) -> Result<LossValue<T>> {
    let [n, _, h, w] = check_maps(pred, gt, valid)?;
    let hw = h * w;
    let mut acc = Vec::new();
    let mut excluded = 0;
    for f in 0..n {
        for px in 0..hw {
            if !valid.bits()[f * hw + px] {
                continue;
            }
            let idx = [0, 1, 2].map(|c| (f * 3 + c) * hw + px);
            let a = idx.map(|i| pred.data()[i]);
            let b = idx.map(|i| gt.data()[i]);
            match angle_and_grad(a, b) {
                Some((theta, g)) => acc.push((idx, theta, g)),
                None => excluded += 1,
            }
        }
    }
    if acc.is_empty() {
        return Err(Error::Empty("normal loss has no usable pixels".into()));
    }
    let norm = lit::<T>(1.0 / acc.len() as f64);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(pred.dims().to_vec());
    for (idx, theta, g) in acc {
        loss = loss + theta;
        for k in 0..3 {
            grad.data_mut()[idx[k]] = g[k] * norm;
        }
    }
    Ok(LossValue {
        loss: loss * norm,
        grad,
        excluded,
    })
}

/// Angular loss between normals derived from the predicted point map (see
/// [`crate::geometry::normals_from_points`]) and ground-truth normals, with
/// the gradient taken through the cross product and difference stencil.
pub fn points_normal_loss<T: Real>(
    pred_points: &Tensor<T>,
    gt_normals: &Tensor<T>,
    valid: &ValidMask,
) -> Result<LossValue<T>> {
    let [n, _, h, w] = check_maps(pred_points, gt_normals, valid)?;
    if h < 3 || w < 3 {
        return Err(Error::shape(format!("derived normals need H, W ≥ 3, got {h}x{w}")));
    }
    let hw = h * w;
    let mut terms = Vec::new();
    let mut excluded = 0;
    for f in 0..n {
        for v in 0..h {
            for u in 0..w {
                let px = v * w + u;
                if !valid.bits()[f * hw + px] {
                    continue;
                }
                let (tu, tv) = tangents(pred_points, f, v, u);
                let c = cross(tu, tv);
                let sigma = if c[2] > T::zero() { -T::one() } else { T::one() };
                let oriented = c.map(|x| sigma * x);
                let b = [0, 1, 2].map(|k| gt_normals.data()[(f * 3 + k) * hw + px]);
                match angle_and_grad(oriented, b) {
                    Some((theta, g)) => {
                        let gc = g.map(|x| sigma * x);
                        // c = tu × tv: dL/dtu = tv × gc, dL/dtv = gc × tu
                        terms.push((f, v, u, theta, cross(tv, gc), cross(gc, tu)));
                    }
                    None => excluded += 1,
                }
            }
        }
    }
    if terms.is_empty() {
        return Err(Error::Empty("derived-normal loss has no usable pixels".into()));
    }
    let norm = lit::<T>(1.0 / terms.len() as f64);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(pred_points.dims().to_vec());
    let g = grad.data_mut();
    for (f, v, u, theta, gtu, gtv) in terms {
        loss = loss + theta;
        let (u0, u1, su) = stencil(u, w);
        let (v0, v1, sv) = stencil(v, h);
        let su = norm / lit::<T>(su);
        let sv = norm / lit::<T>(sv);
        for k in 0..3 {
            let base = (f * 3 + k) * hw;
            g[base + v * w + u1] = g[base + v * w + u1] + gtu[k] * su;
            g[base + v * w + u0] = g[base + v * w + u0] - gtu[k] * su;
            g[base + v1 * w + u] = g[base + v1 * w + u] + gtv[k] * sv;
            g[base + v0 * w + u] = g[base + v0 * w + u] - gtv[k] * sv;
        }
    }
    Ok(LossValue {
        loss: loss * norm,
        grad,
        excluded,
    })
}

/// Supervision for one sequence. Normal terms are skipped when `normals`
/// is `None`.
#[derive(Clone, Debug)]
pub struct Targets<T: Real = f32> {
    pub points: Tensor<T>,
    pub depth: Tensor<T>,
    pub normals: Option<Tensor<T>>,
    pub valid: ValidMask,
}

#[derive(Clone, Debug)]
pub struct TotalLoss<T: Real = f32> {
    pub total: T,
    pub points: T,
    pub normal: T,
    pub points_normal: T,
    pub grad_points: Tensor<T>,
    pub grad_normals: Tensor<T>,
}

/// `L_points + λ_pn·L_points_normal + λ_n·L_normal` on raw prediction maps.
pub fn total_loss_maps<T: Real>(
    pred_points: &Tensor<T>,
    pred_normals: &Tensor<T>,
    targets: &Targets<T>,
    weights: &LossWeights,
) -> Result<TotalLoss<T>> {
    weights.validate()?;
    let p = points_loss(pred_points, &targets.points, &targets.depth, &targets.valid)?;
    let mut out = TotalLoss {
        total: p.loss,
        points: p.loss,
        normal: T::zero(),
        points_normal: T::zero(),
        grad_points: p.grad,
        grad_normals: Tensor::zeros(pred_normals.dims().to_vec()),
    };
    let Some(gt_normals) = &targets.normals else {
        return Ok(out);
    };
    if weights.lambda_points_normal > 0.0 {
        let lam = lit::<T>(weights.lambda_points_normal);
        let pn = points_normal_loss(pred_points, gt_normals, &targets.valid)?;
        out.points_normal = pn.loss;
        out.total = out.total + lam * pn.loss;
        out.grad_points.add_assign(&pn.grad.scale(lam))?;
    }
    if weights.lambda_normal > 0.0 {
        let lam = lit::<T>(weights.lambda_normal);
        let nl = normal_loss(pred_normals, gt_normals, &targets.valid)?;
        out.normal = nl.loss;
        out.total = out.total + lam * nl.loss;
        out.grad_normals = nl.grad.scale(lam);
    }
    Ok(out)
}

pub fn total_loss(outputs: &GeometryOutput, targets: &Targets, weights: &LossWeights) -> Result<TotalLoss> {
    total_loss_maps(&outputs.points, &outputs.normals, targets, weights)
}
