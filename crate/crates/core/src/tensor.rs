//! Dense row-major tensors and the small set of kernels the rest of the crate
//! is built on.
//!
//! Every kernel uses a fixed loop nest, so the same inputs always produce
//! bit-identical outputs. In particular each element of a matrix product is
//! accumulated in ascending inner-index order starting from zero, which makes
//! row `i` of `a · b` depend only on row `i` of `a`. The chunked attention
//! code relies on that to make cached and single-pass execution agree
//! exactly.

use std::fmt;

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating point element type. Implemented for `f32` (the main path) and
/// `f64` (oracles and gradient checks).
pub trait Real: Float + fmt::Debug + fmt::Display + Default + Send + Sync + 'static {
    const NAME: &'static str;
}

impl Real for f32 {
    const NAME: &'static str = "f32";
}

impl Real for f64 {
    const NAME: &'static str = "f64";
}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from(x).expect("literal representable in target float type")
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Vec<usize>,
    data: Vec<T>,
}

pub type Tensor64 = Tensor<f64>;

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor<{}>{:?}", std::any::type_name::<T>(), self.dims)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(dims: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let dims = dims.into();
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "dims {:?} hold {} elements but data has {}",
                dims,
                n,
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: T) -> Self {
        let dims = dims.into();
        let n = dims.iter().product();
        Tensor {
            dims,
            data: vec![value; n],
        }
    }

    pub fn from_fn(dims: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let dims = dims.into();
        let n = dims.iter().product();
        Tensor {
            dims,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            dims: vec![],
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn([n, n], |k| if k / n == k % n { T::one() } else { T::zero() })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        let n: usize = dims.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {:?}",
                self.dims, dims
            )));
        }
        self.dims = dims;
        Ok(self)
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn matrix_dims(&self) -> Result<(usize, usize)> {
        match self.dims[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(format!(
                "expected a matrix, got dims {:?}",
                self.dims
            ))),
        }
    }

    /// Size of the trailing dimension; rank-0 tensors count as one element.
    pub fn last_dim(&self) -> usize {
        self.dims.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.last_dim();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.last_dim();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at2(&self, i: usize, j: usize) -> T {
        self.data[i * self.last_dim() + j]
    }

    /// Element-wise conversion to another float type.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .map(|&x| U::from(x).expect("finite cast"))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_dims(other)?;
        Ok(Tensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|x| x * k)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_dims(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    /// Sum of all elements in storage order.
    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc + x)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.check_same_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn check_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "dimension mismatch {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.matrix_dims()?;
        let mut out = Self::zeros([c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(out)
    }

    /// Rows `start..end` of a matrix (or the leading axis of any tensor).
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        let inner: usize = self.dims[1..].iter().product();
        let mut dims = self.dims.clone();
        dims[0] = end - start;
        Tensor {
            dims,
            data: self.data[start * inner..end * inner].to_vec(),
        }
    }

    /// Concatenates tensors along the leading axis.
    pub fn concat_rows(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let tail = &first.dims[1..];
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if &p.dims[1..] != tail {
                return Err(Error::shape(format!(
                    "concat dims {:?} vs {:?}",
                    first.dims, p.dims
                )));
            }
            rows += p.dims[0];
            data.extend_from_slice(&p.data);
        }
        let mut dims = first.dims.clone();
        dims[0] = rows;
        Ok(Tensor { dims, data })
    }
}

/// Matrix product `a[m×k] · b[k×n]`.
///
/// Each output element is accumulated from zero in ascending `k` order, the
/// same order as the textbook triple loop.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.matrix_dims()?;
    let (k2, n) = b.matrix_dims()?;
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul inner dims differ: {:?} · {:?}",
            a.dims, b.dims
        )));
    }
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aik) in arow.iter().enumerate() {
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + aik * bv;
            }
        }
    }
    Tensor::new([m, n], out)
}

/// `a[m×k] · b[n×k]ᵀ`, accumulated in ascending `k` order.
pub fn matmul_nt<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.matrix_dims()?;
    let (n, k2) = b.matrix_dims()?;
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul_nt inner dims differ: {:?} · {:?}ᵀ",
            a.dims, b.dims
        )));
    }
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.data[j * k..(j + 1) * k];
            out[i * n + j] = dot(arow, brow);
        }
    }
    Tensor::new([m, n], out)
}

/// `a[k×m]ᵀ · b[k×n]`.
pub fn matmul_tn<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, m) = a.matrix_dims()?;
    let (k2, n) = b.matrix_dims()?;
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul_tn inner dims differ: {:?}ᵀ · {:?}",
            a.dims, b.dims
        )));
    }
    let mut out = vec![T::zero(); m * n];
    for p in 0..k {
        let arow = &a.data[p * m..(p + 1) * m];
        let brow = &b.data[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    Tensor::new([m, n], out)
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Row-wise softmax restricted to entries where `mask` is one.
///
/// Masked entries come out exactly zero. The maximum over unmasked entries
/// is subtracted before exponentiation. A row with no unmasked entry is a
/// contract violation.
pub fn masked_softmax<T: Real>(scores: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    let (q, k) = scores.matrix_dims()?;
    scores.check_same_dims(mask)?;
    if mask
        .data
        .iter()
        .any(|&m| m != T::zero() && m != T::one())
    {
        return Err(Error::Contract("mask entries must be 0 or 1".into()));
    }
    let mut out = Tensor::zeros([q, k]);
    for i in 0..q {
        let s = scores.row(i);
        let m = mask.row(i);
        let allowed = |j: usize| m[j] == T::one();
        let mut max = T::neg_infinity();
        let mut any = false;
        for j in (0..k).filter(|&j| allowed(j)) {
            max = max.max(s[j]);
            any = true;
        }
        if !any {
            return Err(Error::Contract(format!("softmax row {i} is fully masked")));
        }
        let row = out.row_mut(i);
        let mut sum = T::zero();
        for j in (0..k).filter(|&j| allowed(j)) {
            let e = (s[j] - max).exp();
            row[j] = e;
            sum = sum + e;
        }
        let inv = T::one() / sum;
        for j in (0..k).filter(|&j| allowed(j)) {
            row[j] = row[j] * inv;
        }
    }
    Ok(out)
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Normalizes every trailing-axis vector of `x` to zero mean and unit
/// variance, then applies `gain` and `bias`.
pub fn layer_norm<T: Real>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let d = x.last_dim();
    if d == 0 || gain.len() != d || bias.len() != d {
        return Err(Error::shape(format!(
            "layer_norm width {} with gain {:?} and bias {:?}",
            d, gain.dims, bias.dims
        )));
    }
    let mut out = x.clone();
    for row in out.data.chunks_mut(d) {
        let (mean, rstd) = moments(row, eps);
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * rstd * gain.data[j] + bias.data[j];
        }
    }
    Ok(out)
}

/// Mean and reciprocal standard deviation (biased variance) of a vector.
pub(crate) fn moments<T: Real>(row: &[T], eps: T) -> (T, T) {
    let n = T::from(row.len()).unwrap();
    let mean = row.iter().fold(T::zero(), |a, &v| a + v) / n;
    let var = row
        .iter()
        .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
        / n;
    (mean, T::one() / (var + eps).sqrt())
}
