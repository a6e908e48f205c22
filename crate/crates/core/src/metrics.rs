//! Depth, point-map and normal evaluation metrics with per-sequence scale
//! or per-frame affine alignment.
//!
//! Medians of even-length samples take the lower middle element.

use std::io::Write;

use crate::autograd::dims4;
use crate::error::{Error, Result};
use crate::geometry::{z_channel, ValidMask};
use crate::model::GeometryOutput;
use crate::tensor::{Real, Tensor};

pub const DELTA1_THRESHOLD: f64 = 1.25;
pub const DELTA_P_THRESHOLD: f64 = 0.25;
pub const NORMAL_THRESHOLD_DEG: f64 = 11.25;

/// CSV header of [`write_reports`].
pub const REPORT_COLUMNS: [&str; 8] = [
    "rel",
    "delta1",
    "rel_p",
    "delta_p_025",
    "n_mean_deg",
    "n_med_deg",
    "delta_1125",
    "valid_count",
];

fn f(x: impl Real) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Lower median: element `(n − 1) / 2` of the sorted sample.
pub fn lower_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let k = (values.len() - 1) / 2;
    let (_, m, _) = values.select_nth_unstable_by(k, f64::total_cmp);
    Some(*m)
}

fn check_mask<T: Real>(t: &Tensor<T>, mask: &ValidMask) -> Result<()> {
    if t.dims() != mask.dims() {
        return Err(Error::shape(format!("map {:?} vs mask {:?}", t.dims(), mask.dims())));
    }
    Ok(())
}

/// Median over valid pixels of `gt / pred` (depth maps, any shape). Pixels
/// with non-positive prediction or ground truth are skipped.
pub fn align_scale_seq<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, mask: &ValidMask) -> Result<f64> {
    pred.check_same_dims(gt)?;
    check_mask(gt, mask)?;
    let mut ratios: Vec<f64> = pred
        .data()
        .iter()
        .zip(gt.data())
        .zip(mask.bits())
        .filter(|&((p, g), &ok)| ok && f(*p) > 0.0 && f(*g) > 0.0)
        .map(|((p, g), _)| f(*g) / f(*p))
        .collect();
    lower_median(&mut ratios).ok_or_else(|| Error::Empty("no valid pixels to align".into()))
}

/// Least-squares `(a, b)` with `a·pred + b ≈ gt` over valid pixels.
pub fn align_affine<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, mask: &ValidMask) -> Result<(f64, f64)> {
    pred.check_same_dims(gt)?;
    check_mask(gt, mask)?;
    let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((p, g), &ok) in pred.data().iter().zip(gt.data()).zip(mask.bits()) {
        if ok {
            let (x, y) = (f(*p), f(*g));
            n += 1.0;
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
    }
    if n < 2.0 {
        return Err(Error::Empty(format!("affine alignment needs 2 valid pixels, got {n}")));
    }
    // centered form avoids cancellation in n·sxx − sx²
    let mx = sx / n;
    let my = sy / n;
    let var = sxx / n - mx * mx;
    let cov = sxy / n - mx * my;
    if !(var > 1e-12 * (mx * mx).max(1e-300)) {
        return Err(Error::Degenerate("prediction is constant over the mask".into()));
    }
    let a = cov / var;
    if a == 0.0 {
        return Err(Error::Degenerate("affine alignment gave a = 0".into()));
    }
    Ok((a, my - a * mx))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthMetrics {
    pub rel: f64,
    pub delta1: f64,
    pub count: usize,
    /// Masked pixels dropped for non-positive ground truth.
    pub excluded: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointMetrics {
    pub rel_p: f64,
    pub delta_p_025: f64,
    pub count: usize,
    pub excluded: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalMetrics {
    pub mean_deg: f64,
    pub median_deg: f64,
    pub delta_11_25: f64,
    pub count: usize,
    pub excluded: usize,
}

fn depth_terms<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, mask: &ValidMask, a: f64, b: f64) -> Result<(Vec<(f64, bool)>, usize)> {
    pred.check_same_dims(gt)?;
    check_mask(gt, mask)?;
    let mut terms = Vec::new();
    let mut excluded = 0;
    for ((p, g), &ok) in pred.data().iter().zip(gt.data()).zip(mask.bits()) {
        if !ok {
            continue;
        }
        let g = f(*g);
        if !(g > 0.0) {
            excluded += 1;
            continue;
        }
        let d = a * f(*p) + b;
        let ratio = if d > 0.0 { (d / g).max(g / d) } else { f64::INFINITY };
        terms.push(((d - g).abs() / g, ratio < DELTA1_THRESHOLD));
    }
    Ok((terms, excluded))
}

fn summarize_depth(terms: Vec<(f64, bool)>, excluded: usize) -> Result<DepthMetrics> {
    if terms.is_empty() {
        return Err(Error::Empty("no valid pixels for depth metrics".into()));
    }
    let n = terms.len() as f64;
    Ok(DepthMetrics {
        rel: terms.iter().map(|t| t.0).sum::<f64>() / n,
        delta1: terms.iter().filter(|t| t.1).count() as f64 / n,
        count: terms.len(),
        excluded,
    })
}

/// Absolute relative error and δ1 of `s·pred` against `gt`.
pub fn depth_metrics<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, mask: &ValidMask, s: f64) -> Result<DepthMetrics> {
    let (terms, excluded) = depth_terms(pred, gt, mask, s, 0.0)?;
    summarize_depth(terms, excluded)
}

/// Depth metrics of `a·pred + b`, for affine-aligned predictions.
pub fn depth_metrics_affine<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, mask: &ValidMask, a: f64, b: f64) -> Result<DepthMetrics> {
    let (terms, excluded) = depth_terms(pred, gt, mask, a, b)?;
    summarize_depth(terms, excluded)
}

fn point_terms<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, mask: &ValidMask, s: f64) -> Result<(Vec<f64>, usize)> {
    pred.check_same_dims(gt)?;
    let [n, c, h, w] = dims4(gt)?;
    if c != 3 || mask.dims() != [n, h, w] {
        return Err(Error::shape(format!("point maps {:?} vs mask {:?}", gt.dims(), mask.dims())));
    }
    let hw = h * w;
    let mut ratios = Vec::new();
    let mut excluded = 0;
    for i in 0..n * hw {
        if !mask.bits()[i] {
            continue;
        }
        let (fr, px) = (i / hw, i % hw);
        let idx = [0, 1, 2].map(|k| (fr * 3 + k) * hw + px);
        let g = idx.map(|j| f(gt.data()[j]));
        let gn = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        if !(gn > 0.0) {
            excluded += 1;
            continue;
        }
        let e = idx.map(|j| s * f(pred.data()[j]));
        let en = ((e[0] - g[0]).powi(2) + (e[1] - g[1]).powi(2) + (e[2] - g[2]).powi(2)).sqrt();
        ratios.push(en / gn);
    }
    Ok((ratios, excluded))
}

/// Point-wise relative error `‖sP − P̂‖/‖P̂‖` and the fraction below 0.25.
pub fn pointmap_metrics<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, mask: &ValidMask, s: f64) -> Result<PointMetrics> {
    let (ratios, excluded) = point_terms(pred, gt, mask, s)?;
    if ratios.is_empty() {
        return Err(Error::Empty("no valid pixels for point-map metrics".into()));
    }
    let n = ratios.len() as f64;
    Ok(PointMetrics {
        rel_p: ratios.iter().sum::<f64>() / n,
        delta_p_025: ratios.iter().filter(|&&r| r < DELTA_P_THRESHOLD).count() as f64 / n,
        count: ratios.len(),
        excluded,
    })
}

fn normal_angles<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, mask: &ValidMask) -> Result<(Vec<f64>, usize)> {
    pred.check_same_dims(gt)?;
    let [n, c, h, w] = dims4(gt)?;
    if c != 3 || mask.dims() != [n, h, w] {
        return Err(Error::shape(format!("normal maps {:?} vs mask {:?}", gt.dims(), mask.dims())));
    }
    let hw = h * w;
    let mut angles = Vec::new();
    let mut excluded = 0;
    for i in 0..n * hw {
        if !mask.bits()[i] {
            continue;
        }
        let (fr, px) = (i / hw, i % hw);
        let idx = [0, 1, 2].map(|k| (fr * 3 + k) * hw + px);
        let a = idx.map(|j| f(pred.data()[j]));
        let b = idx.map(|j| f(gt.data()[j]));
        let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
        if !(na > 0.0 && nb > 0.0) {
            excluded += 1;
            continue;
        }
        // same angle as arccos of the clamped cosine, but exact for
        // identical vectors
        let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let cr = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
        let sin = (cr[0] * cr[0] + cr[1] * cr[1] + cr[2] * cr[2]).sqrt();
        angles.push(sin.atan2(dot).to_degrees());
    }
    Ok((angles, excluded))
}

fn summarize_angles(mut angles: Vec<f64>, excluded: usize) -> Result<NormalMetrics> {
    if angles.is_empty() {
        return Err(Error::Empty("no valid pixels for normal metrics".into()));
    }
    let n = angles.len() as f64;
    let mean = angles.iter().sum::<f64>() / n;
    let within = angles.iter().filter(|&&a| a < NORMAL_THRESHOLD_DEG).count() as f64 / n;
    let count = angles.len();
    Ok(NormalMetrics {
        mean_deg: mean,
        median_deg: lower_median(&mut angles).unwrap_or(f64::NAN),
        delta_11_25: within,
        count,
        excluded,
    })
}

/// Mean and median angular error in degrees and the fraction under 11.25°.
pub fn normal_metrics<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, mask: &ValidMask) -> Result<NormalMetrics> {
    let (angles, excluded) = normal_angles(pred, gt, mask)?;
    summarize_angles(angles, excluded)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Alignment {
    /// One scale per sequence.
    Scale(f64),
    /// Per-frame `(a, b)` with depth `a·pred + b`.
    Affine(Vec<(f64, f64)>),
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignMode {
    Scale,
    Affine,
    None,
}

impl std::str::FromStr for AlignMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scale" | "scale-seq" => Ok(AlignMode::Scale),
            "affine" => Ok(AlignMode::Affine),
            "none" => Ok(AlignMode::None),
            _ => Err(Error::Parse(format!("unknown alignment {s:?} (scale-seq|affine|none)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub rel: Option<f64>,
    pub delta1: Option<f64>,
    pub rel_p: Option<f64>,
    pub delta_p_025: Option<f64>,
    pub normal_mean_deg: Option<f64>,
    pub normal_median_deg: Option<f64>,
    pub delta_11_25: Option<f64>,
    pub alignment: Alignment,
    pub valid_count: usize,
}

/// Ground truth of one sequence for evaluation.
#[derive(Clone, Debug)]
pub struct EvalTarget {
    pub points: Option<Tensor>,
    pub depth: Tensor,
    pub normals: Option<Tensor>,
    pub valid: ValidMask,
}

/// Evaluation-time mask restrictions.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalOptions {
    /// Drop pixels whose gt depth exceeds this.
    pub max_depth: Option<f64>,
    /// Drop this many border pixels on each side.
    pub crop: usize,
}

pub fn eval_mask(target: &EvalTarget, opts: &EvalOptions) -> Result<ValidMask> {
    check_mask(&target.depth, &target.valid)?;
    let dims = target.valid.dims();
    let (h, w) = (dims[dims.len() - 2], dims[dims.len() - 1]);
    let mut mask = target.valid.clone();
    for (i, (bit, d)) in mask.bits_mut().iter_mut().zip(target.depth.data()).enumerate() {
        let (v, u) = ((i / w) % h, i % w);
        let c = opts.crop;
        if v < c || u < c || v + c >= h || u + c >= w {
            *bit = false;
        }
        if let Some(m) = opts.max_depth {
            if *d as f64 > m {
                *bit = false;
            }
        }
    }
    Ok(mask)
}

/// Pixel-level terms of one sequence, kept so several sequences can be
/// pooled into an aggregate report.
#[derive(Clone, Debug, Default)]
pub struct MetricAccumulator {
    depth: Vec<(f64, bool)>,
    points: Vec<f64>,
    angles: Vec<f64>,
    valid: usize,
}

impl MetricAccumulator {
    pub fn merge(&mut self, other: &MetricAccumulator) {
        self.depth.extend_from_slice(&other.depth);
        self.points.extend_from_slice(&other.points);
        self.angles.extend_from_slice(&other.angles);
        self.valid += other.valid;
    }

    pub fn report(&self, alignment: Alignment) -> MetricReport {
        let dm = summarize_depth(self.depth.clone(), 0).ok();
        let n = self.points.len() as f64;
        let nm = summarize_angles(self.angles.clone(), 0).ok();
        MetricReport {
            rel: dm.map(|d| d.rel),
            delta1: dm.map(|d| d.delta1),
            rel_p: (!self.points.is_empty()).then(|| self.points.iter().sum::<f64>() / n),
            delta_p_025: (!self.points.is_empty())
                .then(|| self.points.iter().filter(|&&r| r < DELTA_P_THRESHOLD).count() as f64 / n),
            normal_mean_deg: nm.map(|m| m.mean_deg),
            normal_median_deg: nm.map(|m| m.median_deg),
            delta_11_25: nm.map(|m| m.delta_11_25),
            alignment,
            valid_count: self.valid,
        }
    }
}

/// Evaluates one predicted sequence. Scale alignment uses one median
/// ratio for depth and points; affine alignment fits depth per frame and
/// leaves point-map metrics out.
pub fn evaluate_sequence(
    pred: &GeometryOutput,
    target: &EvalTarget,
    mode: AlignMode,
    opts: &EvalOptions,
) -> Result<(MetricReport, MetricAccumulator)> {
    evaluate_maps(&pred.depth, Some(&pred.points), Some(&pred.normals), target, mode, opts)
}

/// [`evaluate_sequence`] for predictions that may lack point or normal
/// maps. Metrics whose prediction or ground truth is missing stay empty.
pub fn evaluate_maps(
    depth: &Tensor,
    points: Option<&Tensor>,
    normals: Option<&Tensor>,
    target: &EvalTarget,
    mode: AlignMode,
    opts: &EvalOptions,
) -> Result<(MetricReport, MetricAccumulator)> {
    let mask = eval_mask(target, opts)?;
    depth.check_same_dims(&target.depth)?;
    let mut acc = MetricAccumulator {
        valid: mask.count(),
        ..Default::default()
    };
    let point_pair = points.zip(target.points.as_ref());
    let alignment = match mode {
        AlignMode::Scale | AlignMode::None => {
            let s = match mode {
                AlignMode::Scale => align_scale_seq(depth, &target.depth, &mask)?,
                _ => 1.0,
            };
            acc.depth = depth_terms(depth, &target.depth, &mask, s, 0.0)?.0;
            if let Some((pp, gp)) = point_pair {
                acc.points = point_terms(pp, gp, &mask, s)?.0;
            }
            match mode {
                AlignMode::Scale => Alignment::Scale(s),
                _ => Alignment::None,
            }
        }
        AlignMode::Affine => {
            let frames = if depth.rank() == 3 { depth.dims()[0] } else { 1 };
            let mut fits = Vec::new();
            for fr in 0..frames {
                let (m, p, g) = if depth.rank() == 3 {
                    (
                        mask.slice_rows(fr, fr + 1),
                        depth.slice_rows(fr, fr + 1),
                        target.depth.slice_rows(fr, fr + 1),
                    )
                } else {
                    (mask.clone(), depth.clone(), target.depth.clone())
                };
                let (a, b) = align_affine(&p, &g, &m)?;
                acc.depth.extend(depth_terms(&p, &g, &m, a, b)?.0);
                fits.push((a, b));
            }
            Alignment::Affine(fits)
        }
    };
    if let Some((pn, gn)) = normals.zip(target.normals.as_ref()) {
        acc.angles = normal_angles(pn, gn, &mask)?.0;
    }
    if acc.depth.is_empty() {
        return Err(Error::Empty("no valid pixels to evaluate".into()));
    }
    Ok((acc.report(alignment), acc))
}

/// Ground truth from a rendered scene.
pub fn target_from_maps(points: Tensor, normals: Option<Tensor>, valid: ValidMask) -> Result<EvalTarget> {
    let depth = z_channel(&points)?;
    Ok(EvalTarget {
        points: Some(points),
        depth,
        normals,
        valid,
    })
}

/// Writes one row per report (sequence order, aggregate last when
/// included). Missing values are left empty.
pub fn write_reports<W: Write>(reports: &[MetricReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in reports {
        w.write_record([
            cell(r.rel),
            cell(r.delta1),
            cell(r.rel_p),
            cell(r.delta_p_025),
            cell(r.normal_mean_deg),
            cell(r.normal_median_deg),
            cell(r.delta_11_25),
            r.valid_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(v: &[f64]) -> Tensor<f64> {
        Tensor::new([v.len()], v.to_vec()).unwrap()
    }

    fn all(n: usize) -> ValidMask {
        ValidMask::full([n], true)
    }

    #[test]
    fn lower_median_convention() {
        assert_eq!(lower_median(&mut [4.0, 1.0, 3.0, 2.0]), Some(2.0));
        assert_eq!(lower_median(&mut [5.0, 1.0, 3.0]), Some(3.0));
        assert_eq!(lower_median(&mut []), None);
    }

    #[test]
    fn scale_alignment_examples() {
        let gt = t1(&[1.0, 2.0, 3.0, 6.0]);
        assert_eq!(align_scale_seq(&gt, &gt, &all(4)).unwrap(), 1.0);
        assert!((align_scale_seq(&gt.scale(1.0 / 3.0), &gt, &all(4)).unwrap() - 3.0).abs() < 1e-12);
        assert!(align_scale_seq(&gt, &gt, &ValidMask::full([4], false)).is_err());
    }

    #[test]
    fn affine_alignment_examples() {
        let gt = t1(&[1.0, 2.0, 4.0, 7.0]);
        let (a, b) = align_affine(&gt, &gt, &all(4)).unwrap();
        assert!((a - 1.0).abs() < 1e-12 && b.abs() < 1e-12);
        let pred = gt.map(|g| (g - 5.0) / 2.0);
        let (a, b) = align_affine(&pred, &gt, &all(4)).unwrap();
        assert!((a - 2.0).abs() < 1e-12 && (b - 5.0).abs() < 1e-12);
        assert!(matches!(
            align_affine(&t1(&[2.0, 2.0, 2.0]), &t1(&[1.0, 2.0, 3.0]), &all(3)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn depth_metric_examples() {
        let gt = t1(&[1.0, 2.0, 3.0]);
        let m = depth_metrics(&gt, &gt, &all(3), 1.0).unwrap();
        assert_eq!((m.rel, m.delta1), (0.0, 1.0));
        let m = depth_metrics(&gt.scale(1.3), &gt, &all(3), 1.0).unwrap();
        assert!((m.rel - 0.3).abs() < 1e-12);
        assert_eq!(m.delta1, 0.0);
        // 4-pixel instance evaluated by hand
        let m = depth_metrics(&t1(&[1.0, 2.4, 2.0, 4.0]), &t1(&[1.0, 2.0, 2.5, 4.0]), &all(4), 1.0).unwrap();
        assert!((m.rel - (0.0 + 0.2 + 0.2 + 0.0) / 4.0).abs() < 1e-12);
        // 2.5 / 2.0 sits exactly on the 1.25 threshold, which is excluded
        assert_eq!(m.delta1, 0.75);
        let m = depth_metrics(&t1(&[1.0, 3.0]), &t1(&[1.0, 0.0]), &all(2), 1.0).unwrap();
        assert_eq!((m.count, m.excluded), (1, 1));
    }

    #[test]
    fn pointmap_metric_examples() {
        let gt = Tensor::<f64>::from_fn([1, 3, 2, 2], |i| 1.0 + i as f64);
        let mask = ValidMask::full([1, 2, 2], true);
        let m = pointmap_metrics(&gt, &gt, &mask, 1.0).unwrap();
        assert_eq!((m.rel_p, m.delta_p_025), (0.0, 1.0));
        let m = pointmap_metrics(&gt.scale(1.5), &gt, &mask, 1.0).unwrap();
        assert!((m.rel_p - 0.5).abs() < 1e-12);
        assert_eq!(m.delta_p_025, 0.0);
    }

    fn rotated(deg: &[f64]) -> (Tensor<f64>, Tensor<f64>) {
        let n = deg.len();
        let gt = Tensor::from_fn([1, 3, 1, n], |i| if i / n == 2 { -1.0 } else { 0.0 });
        let pred = Tensor::from_fn([1, 3, 1, n], |i| {
            let t = deg[i % n].to_radians();
            match i / n {
                0 => t.sin(),
                1 => 0.0,
                _ => -t.cos(),
            }
        });
        (pred, gt)
    }

    #[test]
    fn normal_metric_examples() {
        let (_, gt) = rotated(&[0.0; 4]);
        let mask = ValidMask::full([1, 1, 4], true);
        let m = normal_metrics(&gt, &gt, &mask).unwrap();
        assert_eq!((m.mean_deg, m.median_deg, m.delta_11_25), (0.0, 0.0, 1.0));
        let (p, gt) = rotated(&[10.0; 4]);
        let m = normal_metrics(&p, &gt, &mask).unwrap();
        assert!((m.mean_deg - 10.0).abs() < 1e-9 && (m.median_deg - 10.0).abs() < 1e-9);
        assert_eq!(m.delta_11_25, 1.0);
        let (p, gt) = rotated(&[5.0, 20.0, 20.0, 5.0]);
        let m = normal_metrics(&p, &gt, &mask).unwrap();
        assert!((m.mean_deg - 12.5).abs() < 1e-9);
        assert!((m.median_deg - 5.0).abs() < 1e-9);
        assert_eq!(m.delta_11_25, 0.5);
    }

    #[test]
    fn csv_has_exact_columns() {
        let acc = MetricAccumulator {
            depth: vec![(0.1, true)],
            points: vec![],
            angles: vec![],
            valid: 1,
        };
        let mut out = Vec::new();
        write_reports(&[acc.report(Alignment::Scale(1.0))], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "rel,delta1,rel_p,delta_p_025,n_mean_deg,n_med_deg,delta_1125,valid_count");
        assert_eq!(lines.next().unwrap(), "0.1,1,,,,,,1");
    }

    #[test]
    fn crop_and_max_depth_shrink_mask() {
        let depth = Tensor::from_fn([1, 4, 4], |i| i as f32 + 1.0);
        let target = EvalTarget {
            points: None,
            depth,
            normals: None,
            valid: ValidMask::full([1, 4, 4], true),
        };
        let m = eval_mask(&target, &EvalOptions { max_depth: None, crop: 1 }).unwrap();
        assert_eq!(m.count(), 4);
        let m = eval_mask(&target, &EvalOptions { max_depth: Some(8.0), crop: 0 }).unwrap();
        assert_eq!(m.count(), 8);
    }
}
