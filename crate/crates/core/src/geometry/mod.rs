//! Pinhole camera, point-map conversions, normals from point maps and the
//! synthetic scene renderer.

mod scene;

pub use scene::{synth_scene, Pose, SceneData, SceneKind, SceneSpec};

use crate::autograd::dims4;
use crate::error::{Error, Result};
use crate::tensor::{lit, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl PinholeCamera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::Config(format!("focal lengths must be positive, got {fx}, {fy}")));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::Config("principal point must be finite".into()));
        }
        Ok(PinholeCamera { fx, fy, cx, cy })
    }

    /// Focal length equal to the image width (about 53° horizontal field of
    /// view), principal point at the image center. Pixel centers sit on
    /// integer coordinates.
    pub fn centered(height: usize, width: usize) -> Self {
        PinholeCamera {
            fx: width as f64,
            fy: width as f64,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    /// Ray through pixel (u, v) with unit z component.
    pub fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0]
    }

    /// Pixel coordinates of a camera-frame point with z > 0.
    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        [self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy]
    }
}

/// Boolean per-pixel map, `[N×H×W]` or any other shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidMask {
    dims: Vec<usize>,
    bits: Vec<bool>,
}

impl ValidMask {
    pub fn new(dims: impl Into<Vec<usize>>, bits: Vec<bool>) -> Result<Self> {
        let dims = dims.into();
        let n: usize = dims.iter().product();
        if n != bits.len() {
            return Err(Error::shape(format!("mask dims {dims:?} hold {n} values, got {}", bits.len())));
        }
        Ok(ValidMask { dims, bits })
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: bool) -> Self {
        let dims = dims.into();
        let n = dims.iter().product();
        ValidMask { dims, bits: vec![value; n] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &ValidMask) -> Result<ValidMask> {
        if self.dims != other.dims {
            return Err(Error::shape(format!("mask dims {:?} vs {:?}", self.dims, other.dims)));
        }
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && b).collect();
        Ok(ValidMask { dims: self.dims.clone(), bits })
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> ValidMask {
        let inner: usize = self.dims[1..].iter().product();
        let mut dims = self.dims.clone();
        dims[0] = end - start;
        ValidMask {
            dims,
            bits: self.bits[start * inner..end * inner].to_vec(),
        }
    }

    pub fn concat_rows(parts: &[&ValidMask]) -> Result<ValidMask> {
        let first = parts.first().ok_or_else(|| Error::shape("concatenating no masks"))?;
        let mut dims = first.dims.clone();
        let mut bits = Vec::new();
        dims[0] = 0;
        for p in parts {
            if p.dims[1..] != first.dims[1..] {
                return Err(Error::shape(format!("mask dims {:?} vs {:?}", p.dims, first.dims)));
            }
            dims[0] += p.dims[0];
            bits.extend_from_slice(&p.bits);
        }
        Ok(ValidMask { dims, bits })
    }
}

fn frames_hw<T: Real>(depth: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *depth.dims() {
        [h, w] => Ok((1, h, w)),
        [n, h, w] => Ok((n, h, w)),
        ref d => Err(Error::shape(format!("depth must be [H×W] or [N×H×W], got {d:?}"))),
    }
}

/// Back-projects depth `[N×H×W]` (or `[H×W]`) to a point map `[N×3×H×W]`.
pub fn depth_to_points<T: Real>(depth: &Tensor<T>, camera: &PinholeCamera) -> Result<Tensor<T>> {
    let (n, h, w) = frames_hw(depth)?;
    if let Some(bad) = depth.data().iter().find(|d| !(**d > T::zero()) || !d.is_finite()) {
        return Err(Error::Contract(format!("depth must be positive and finite, found {bad}")));
    }
    let hw = h * w;
    let mut out = vec![T::zero(); n * 3 * hw];
    for f in 0..n {
        for v in 0..h {
            for u in 0..w {
                let d = depth.data()[f * hw + v * w + u];
                let r = camera.ray(u as f64, v as f64);
                out[(f * 3) * hw + v * w + u] = d * lit::<T>(r[0]);
                out[(f * 3 + 1) * hw + v * w + u] = d * lit::<T>(r[1]);
                out[(f * 3 + 2) * hw + v * w + u] = d;
            }
        }
    }
    Tensor::new([n, 3, h, w], out)
}

/// Copies channel 2 of a `[N×3×H×W]` map into `[N×H×W]`.
pub fn z_channel<T: Real>(points: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims4(points)?;
    if c != 3 {
        return Err(Error::shape(format!("point map with {c} channels")));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * hw);
    for f in 0..n {
        let base = (f * 3 + 2) * hw;
        out.extend_from_slice(&points.data()[base..base + hw]);
    }
    Tensor::new([n, h, w], out)
}

/// Neighbour indices and step for the derivative at `i` along an axis of
/// length `n`: central inside, one-sided at the borders.
pub(crate) fn stencil(i: usize, n: usize) -> (usize, usize, f64) {
    if i == 0 {
        (0, 1, 1.0)
    } else if i == n - 1 {
        (n - 2, n - 1, 1.0)
    } else {
        (i - 1, i + 1, 2.0)
    }
}

pub(crate) fn cross<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Unnormalized tangents `(t_u, t_v)` of a point map at pixel (f, v, u).
pub(crate) fn tangents<T: Real>(points: &Tensor<T>, f: usize, v: usize, u: usize) -> ([T; 3], [T; 3]) {
    let [_, _, h, w] = dims4(points).expect("checked by caller");
    let hw = h * w;
    let d = points.data();
    let at = |c: usize, vv: usize, uu: usize| d[(f * 3 + c) * hw + vv * w + uu];
    let (u0, u1, su) = stencil(u, w);
    let (v0, v1, sv) = stencil(v, h);
    let su = lit::<T>(su);
    let sv = lit::<T>(sv);
    let tu = [0, 1, 2].map(|c| (at(c, v, u1) - at(c, v, u0)) / su);
    let tv = [0, 1, 2].map(|c| (at(c, v1, u) - at(c, v0, u)) / sv);
    (tu, tv)
}

/// Surface normals of a point map `[N×3×H×W]` from finite-difference
/// tangents, `normalize(t_u × t_v)` flipped to face the camera (z ≤ 0).
/// Pixels whose cross product vanishes are invalid and get a zero vector.
pub fn normals_from_points<T: Real>(points: &Tensor<T>) -> Result<(Tensor<T>, ValidMask)> {
    let [n, c, h, w] = dims4(points)?;
    if c != 3 || h < 3 || w < 3 {
        return Err(Error::shape(format!(
            "need a [N×3×H×W] point map with H, W ≥ 3, got {:?}",
            points.dims()
        )));
    }
    let hw = h * w;
    let mut out = vec![T::zero(); n * 3 * hw];
    let mut valid = vec![false; n * hw];
    for f in 0..n {
        for v in 0..h {
            for u in 0..w {
                let (tu, tv) = tangents(points, f, v, u);
                let cr = cross(tu, tv);
                let norm = (cr[0] * cr[0] + cr[1] * cr[1] + cr[2] * cr[2]).sqrt();
                if !(norm > T::zero()) || !norm.is_finite() {
                    continue;
                }
                let sign = if cr[2] > T::zero() { -T::one() } else { T::one() };
                for k in 0..3 {
                    out[(f * 3 + k) * hw + v * w + u] = sign * cr[k] / norm;
                }
                valid[f * hw + v * w + u] = true;
            }
        }
    }
    Ok((Tensor::new([n, 3, h, w], out)?, ValidMask::new([n, h, w], valid)?))
}
