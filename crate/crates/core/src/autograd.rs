//! Minimal reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] evaluates eagerly and records the operations it performed.
//! With recording disabled no backward caches are kept, which is how the
//! model runs at inference time.

use std::borrow::Cow;

use crate::attention::{attention_kernel, attention_kernel_backward, AttentionProbs, KeyMask};
use crate::error::{Error, Result};
use crate::tensor::{lit, matmul, matmul_nt, matmul_tn, moments, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Relu(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        probs: AttentionProbs<T>,
    },
    AddRows {
        x: Var,
        table: Var,
        index: Vec<usize>,
    },
    Conv3x3 {
        x: Var,
        w: Var,
        b: Var,
    },
    Unpatchify {
        x: Var,
        patch: usize,
    },
    ExpChannel {
        x: Var,
        channel: usize,
    },
    NormalizeVec3(Var),
}

struct Node<'a, T: Clone> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<'a, T: Real = f32> {
    nodes: Vec<Node<'a, T>>,
    record: bool,
}

/// Gradients indexed by [`Var`].
pub struct Grads<T = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<'a, T: Real> Graph<'a, T> {
    /// A graph that records operations for [`Graph::backward`].
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            record: true,
        }
    }

    /// A graph that only evaluates.
    pub fn inference() -> Self {
        Graph {
            nodes: Vec::new(),
            record: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>, needs_grad: bool) -> Var {
        let needs_grad = needs_grad && self.record;
        let op = if needs_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    /// Borrowed trainable parameter.
    pub fn param(&mut self, t: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = matmul(self.value(a), self.value(b))?;
        let g = self.needs(&[a, b]);
        Ok(self.push(Cow::Owned(y), Op::MatMul(a, b), g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).add(self.value(b))?;
        let g = self.needs(&[a, b]);
        Ok(self.push(Cow::Owned(y), Op::Add(a, b), g))
    }

    /// Adds a bias vector to every trailing-axis row.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let bias = self.value(b);
        let n = self.value(x).last_dim();
        if bias.len() != n {
            return Err(Error::shape(format!(
                "bias {:?} for width {n}",
                bias.dims()
            )));
        }
        let mut y = self.value(x).clone();
        for row in y.data_mut().chunks_mut(n) {
            for (o, &bb) in row.iter_mut().zip(bias.data()) {
                *o = *o + bb;
            }
        }
        let g = self.needs(&[x, b]);
        Ok(self.push(Cow::Owned(y), Op::AddBias(x, b), g))
    }

    /// `x · w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        let (gv, bv) = (self.value(gain), self.value(bias));
        if gv.len() != d || bv.len() != d {
            return Err(Error::shape("layer_norm parameter width"));
        }
        let eps = lit::<T>(crate::tensor::LAYER_NORM_EPS);
        let mut xhat = xv.clone();
        let mut rstds = Vec::with_capacity(xv.len() / d.max(1));
        for row in xhat.data_mut().chunks_mut(d) {
            let (mean, rstd) = moments(row, eps);
            for v in row.iter_mut() {
                *v = (*v - mean) * rstd;
            }
            rstds.push(rstd);
        }
        let mut y = xhat.clone();
        for row in y.data_mut().chunks_mut(d) {
            for j in 0..d {
                row[j] = row[j] * gv.data()[j] + bv.data()[j];
            }
        }
        let g = self.needs(&[x, gain, bias]);
        Ok(self.push(
            Cow::Owned(y),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd: rstds,
            },
            g,
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let c = lit::<T>(GELU_C);
        let a = lit::<T>(GELU_A);
        let half = lit::<T>(0.5);
        let y = self
            .value(x)
            .map(|v| half * v * (T::one() + (c * (v + a * v * v * v)).tanh()));
        let g = self.needs(&[x]);
        self.push(Cow::Owned(y), Op::Gelu(x), g)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(T::zero()));
        let g = self.needs(&[x]);
        self.push(Cow::Owned(y), Op::Relu(x), g)
    }

    /// Multi-head attention core on projected `q`, `k`, `v`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: KeyMask<'_>,
    ) -> Result<Var> {
        let g = self.record && self.needs(&[q, k, v]);
        let (y, probs) = attention_kernel(
            self.value(q),
            self.value(k),
            self.value(v),
            heads,
            mask,
            g,
        )?;
        let op = match probs {
            Some(probs) => Op::Attention { q, k, v, probs },
            None => Op::Leaf,
        };
        Ok(self.push(Cow::Owned(y), op, g))
    }

    /// Row `r` of `x` gets row `index[r]` of `table` added.
    pub fn add_rows(&mut self, x: Var, table: Var, index: Vec<usize>) -> Result<Var> {
        let (rows, d) = self.value(x).matrix_dims()?;
        let (trows, td) = self.value(table).matrix_dims()?;
        if td != d || index.len() != rows || index.iter().any(|&i| i >= trows) {
            return Err(Error::shape("add_rows index or width mismatch"));
        }
        let mut y = self.value(x).clone();
        let t = self.value(table);
        for (r, &i) in index.iter().enumerate() {
            for (o, &e) in y.row_mut(r).iter_mut().zip(t.row(i)) {
                *o = *o + e;
            }
        }
        let g = self.needs(&[x, table]);
        Ok(self.push(Cow::Owned(y), Op::AddRows { x, table, index }, g))
    }

    /// 3×3 convolution with zero padding on `[N×Cin×H×W]` using weights
    /// `[Cout×Cin×3×3]` and bias `[Cout]`.
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = conv3x3_forward(self.value(x), self.value(w), self.value(b))?;
        let g = self.needs(&[x, w, b]);
        Ok(self.push(Cow::Owned(y), Op::Conv3x3 { x, w, b }, g))
    }

    /// Token rows `[N·P × C·p·p]` back to feature maps `[N×C×H×W]`.
    pub fn unpatchify(
        &mut self,
        x: Var,
        frames: usize,
        height: usize,
        width: usize,
        patch: usize,
    ) -> Result<Var> {
        let y = unpatchify(self.value(x), frames, height, width, patch)?;
        let g = self.needs(&[x]);
        Ok(self.push(Cow::Owned(y), Op::Unpatchify { x, patch }, g))
    }

    /// Exponentiates one channel of a `[N×C×H×W]` map in place.
    pub fn exp_channel(&mut self, x: Var, channel: usize) -> Result<Var> {
        let xv = self.value(x);
        let [n, c, h, w] = dims4(xv)?;
        if channel >= c {
            return Err(Error::shape("exp_channel channel out of range"));
        }
        let mut y = xv.clone();
        let hw = h * w;
        for f in 0..n {
            let base = (f * c + channel) * hw;
            for v in &mut y.data_mut()[base..base + hw] {
                *v = v.exp();
            }
        }
        let g = self.needs(&[x]);
        Ok(self.push(Cow::Owned(y), Op::ExpChannel { x, channel }, g))
    }

    /// Normalizes the 3-vector at every pixel of a `[N×3×H×W]` map.
    pub fn normalize_vec3(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let [n, c, h, w] = dims4(xv)?;
        if c != 3 {
            return Err(Error::shape("normalize_vec3 needs 3 channels"));
        }
        let hw = h * w;
        let mut y = xv.clone();
        let d = y.data_mut();
        for f in 0..n {
            for p in 0..hw {
                let idx = [f * 3 * hw + p, (f * 3 + 1) * hw + p, (f * 3 + 2) * hw + p];
                let norm = vec3_norm(d, idx);
                let inv = T::one() / norm.max(lit(1e-12));
                for i in idx {
                    d[i] = d[i] * inv;
                }
            }
        }
        let g = self.needs(&[x]);
        Ok(self.push(Cow::Owned(y), Op::NormalizeVec3(x), g))
    }

    /// Back-propagates the given output gradients through every recorded
    /// operation.
    pub fn backward(&self, seeds: Vec<(Var, Tensor<T>)>) -> Result<Grads<T>> {
        if !self.record {
            return Err(Error::Contract("backward on a non-recording graph".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            self.value(v).check_same_dims(&g)?;
            accumulate(&mut grads, v, g)?;
        }
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let out = self.propagate(&node.op, &gy)?;
            grads[idx] = Some(gy);
            for (v, g) in out {
                if self.nodes[v.0].needs_grad {
                    accumulate(&mut grads, v, g)?;
                }
            }
        }
        Ok(Grads { grads })
    }

    fn propagate(&self, op: &Op<T>, gy: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let val = |v: Var| self.value(v);
        Ok(match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => vec![
                (*a, matmul_nt(gy, val(*b))?),
                (*b, matmul_tn(val(*a), gy)?),
            ],
            Op::Add(a, b) => vec![(*a, gy.clone()), (*b, gy.clone())],
            Op::AddBias(x, b) => {
                let n = gy.last_dim();
                let mut gb = Tensor::zeros(val(*b).dims().to_vec());
                for row in gy.data().chunks(n) {
                    for (o, &g) in gb.data_mut().iter_mut().zip(row) {
                        *o = *o + g;
                    }
                }
                vec![(*x, gy.clone()), (*b, gb)]
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = gy.last_dim();
                let gv = val(*gain);
                let mut gg = Tensor::zeros([d]);
                let mut gb = Tensor::zeros([d]);
                let mut gx = Tensor::zeros(gy.dims().to_vec());
                let dn = lit::<T>(d as f64);
                for (r, (grow, hrow)) in gy.data().chunks(d).zip(xhat.data().chunks(d)).enumerate() {
                    let mut sum_g = T::zero();
                    let mut sum_gh = T::zero();
                    for j in 0..d {
                        gg.data_mut()[j] = gg.data()[j] + grow[j] * hrow[j];
                        gb.data_mut()[j] = gb.data()[j] + grow[j];
                        let gh = grow[j] * gv.data()[j];
                        sum_g = sum_g + gh;
                        sum_gh = sum_gh + gh * hrow[j];
                    }
                    let out = gx.row_mut(r);
                    for j in 0..d {
                        let gh = grow[j] * gv.data()[j];
                        out[j] = rstd[r] * (gh - sum_g / dn - hrow[j] * sum_gh / dn);
                    }
                }
                vec![(*x, gx), (*gain, gg), (*bias, gb)]
            }
            Op::Gelu(x) => {
                let c = lit::<T>(GELU_C);
                let a = lit::<T>(GELU_A);
                let half = lit::<T>(0.5);
                let three = lit::<T>(3.0);
                let gx = val(*x).zip_map(gy, |v, g| {
                    let t = (c * (v + a * v * v * v)).tanh();
                    let dt = (T::one() - t * t) * c * (T::one() + three * a * v * v);
                    g * (half * (T::one() + t) + half * v * dt)
                })?;
                vec![(*x, gx)]
            }
            Op::Relu(x) => {
                let gx = val(*x).zip_map(gy, |v, g| if v > T::zero() { g } else { T::zero() })?;
                vec![(*x, gx)]
            }
            Op::Attention { q, k, v, probs } => {
                let (dq, dk, dv) = attention_kernel_backward(val(*q), val(*k), val(*v), probs, gy)?;
                vec![(*q, dq), (*k, dk), (*v, dv)]
            }
            Op::AddRows { x, table, index } => {
                let mut gt = Tensor::zeros(val(*table).dims().to_vec());
                for (r, &i) in index.iter().enumerate() {
                    for (o, &g) in gt.row_mut(i).iter_mut().zip(gy.row(r)) {
                        *o = *o + g;
                    }
                }
                vec![(*x, gy.clone()), (*table, gt)]
            }
            Op::Conv3x3 { x, w, b } => {
                let (gx, gw, gb) = conv3x3_backward(val(*x), val(*w), gy)?;
                vec![(*x, gx), (*w, gw), (*b, gb)]
            }
            Op::Unpatchify { x, patch } => {
                let gx = patchify(gy, *patch)?;
                vec![(*x, gx)]
            }
            Op::ExpChannel { x, channel } => {
                let [n, c, h, w] = dims4(gy)?;
                let hw = h * w;
                let xv = val(*x);
                let mut gx = gy.clone();
                for f in 0..n {
                    let base = (f * c + channel) * hw;
                    for p in base..base + hw {
                        gx.data_mut()[p] = gy.data()[p] * xv.data()[p].exp();
                    }
                }
                vec![(*x, gx)]
            }
            Op::NormalizeVec3(x) => {
                let xv = val(*x);
                let [n, _, h, w] = dims4(xv)?;
                let hw = h * w;
                let mut gx = Tensor::zeros(xv.dims().to_vec());
                let xd = xv.data();
                let gd = gy.data();
                for f in 0..n {
                    for p in 0..hw {
                        let idx = [f * 3 * hw + p, (f * 3 + 1) * hw + p, (f * 3 + 2) * hw + p];
                        let norm = vec3_norm(xd, idx).max(lit(1e-12));
                        let inv = T::one() / norm;
                        let u = idx.map(|i| xd[i] * inv);
                        let g = idx.map(|i| gd[i]);
                        let ug = u[0] * g[0] + u[1] * g[1] + u[2] * g[2];
                        for k in 0..3 {
                            gx.data_mut()[idx[k]] = (g[k] - u[k] * ug) * inv;
                        }
                    }
                }
                vec![(*x, gx)]
            }
        })
    }
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn vec3_norm<T: Real>(d: &[T], idx: [usize; 3]) -> T {
    (d[idx[0]] * d[idx[0]] + d[idx[1]] * d[idx[1]] + d[idx[2]] * d[idx[2]]).sqrt()
}

pub(crate) fn dims4<T: Real>(t: &Tensor<T>) -> Result<[usize; 4]> {
    match t.dims() {
        &[n, c, h, w] => Ok([n, c, h, w]),
        d => Err(Error::shape(format!("expected [N, C, H, W], got {d:?}"))),
    }
}

/// Splits `[N×C×H×W]` into patch rows `[N·P × C·p·p]`, patches in row-major
/// order within each frame and `(channel, dy, dx)` order within a patch.
pub fn patchify<T: Real>(x: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims4(x)?;
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::shape(format!(
            "{h}x{w} not divisible by patch size {patch}"
        )));
    }
    let (ph, pw) = (h / patch, w / patch);
    let cols = c * patch * patch;
    let mut out = vec![T::zero(); n * ph * pw * cols];
    for f in 0..n {
        for py in 0..ph {
            for px in 0..pw {
                let row = (f * ph + py) * pw + px;
                for ch in 0..c {
                    for dy in 0..patch {
                        for dx in 0..patch {
                            let src = ((f * c + ch) * h + py * patch + dy) * w + px * patch + dx;
                            out[row * cols + (ch * patch + dy) * patch + dx] = x.data()[src];
                        }
                    }
                }
            }
        }
    }
    Tensor::new([n * ph * pw, cols], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Real>(
    x: &Tensor<T>,
    frames: usize,
    height: usize,
    width: usize,
    patch: usize,
) -> Result<Tensor<T>> {
    let (rows, cols) = x.matrix_dims()?;
    if patch == 0 || !height.is_multiple_of(patch) || !width.is_multiple_of(patch) || cols % (patch * patch) != 0 {
        return Err(Error::shape("unpatchify geometry"));
    }
    let (ph, pw) = (height / patch, width / patch);
    if rows != frames * ph * pw {
        return Err(Error::shape(format!(
            "{rows} patch rows for {frames} frames of {ph}x{pw} patches"
        )));
    }
    let c = cols / (patch * patch);
    let mut out = vec![T::zero(); frames * c * height * width];
    for f in 0..frames {
        for py in 0..ph {
            for px in 0..pw {
                let row = (f * ph + py) * pw + px;
                for ch in 0..c {
                    for dy in 0..patch {
                        for dx in 0..patch {
                            let dst = ((f * c + ch) * height + py * patch + dy) * width
                                + px * patch
                                + dx;
                            out[dst] = x.data()[row * cols + (ch * patch + dy) * patch + dx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new([frames, c, height, width], out)
}

fn conv3x3_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, cin, h, wd] = dims4(x)?;
    let [cout, wcin, kh, kw] = dims4(w)?;
    if wcin != cin || kh != 3 || kw != 3 || b.len() != cout {
        return Err(Error::shape(format!(
            "conv3x3 input {:?} weights {:?} bias {:?}",
            x.dims(),
            w.dims(),
            b.dims()
        )));
    }
    let mut out = vec![T::zero(); n * cout * h * wd];
    let xd = x.data();
    let wdat = w.data();
    for f in 0..n {
        for co in 0..cout {
            let obase = (f * cout + co) * h * wd;
            for v in &mut out[obase..obase + h * wd] {
                *v = b.data()[co];
            }
            for ci in 0..cin {
                let ibase = (f * cin + ci) * h * wd;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wv = wdat[((co * cin + ci) * 3 + ky) * 3 + kx];
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let srow = ibase + sy as usize * wd;
                            let orow = obase + y * wd;
                            for xx in 0..wd {
                                let sx = xx as isize + kx as isize - 1;
                                if sx < 0 || sx >= wd as isize {
                                    continue;
                                }
                                out[orow + xx] = out[orow + xx] + wv * xd[srow + sx as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new([n, cout, h, wd], out)
}

fn conv3x3_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [n, cin, h, wd] = dims4(x)?;
    let cout = w.dims()[0];
    let mut gx = Tensor::zeros(x.dims().to_vec());
    let mut gw = Tensor::zeros(w.dims().to_vec());
    let mut gb = Tensor::zeros([cout]);
    let xd = x.data();
    let wdat = w.data();
    let gd = gy.data();
    for f in 0..n {
        for co in 0..cout {
            let obase = (f * cout + co) * h * wd;
            gb.data_mut()[co] = gd[obase..obase + h * wd]
                .iter()
                .fold(gb.data()[co], |a, &g| a + g);
            for ci in 0..cin {
                let ibase = (f * cin + ci) * h * wd;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let widx = ((co * cin + ci) * 3 + ky) * 3 + kx;
                        let wv = wdat[widx];
                        let mut acc = T::zero();
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let srow = ibase + sy as usize * wd;
                            let orow = obase + y * wd;
                            for xx in 0..wd {
                                let sx = xx as isize + kx as isize - 1;
                                if sx < 0 || sx >= wd as isize {
                                    continue;
                                }
                                let g = gd[orow + xx];
                                acc = acc + g * xd[srow + sx as usize];
                                let gxv = &mut gx.data_mut()[srow + sx as usize];
                                *gxv = *gxv + g * wv;
                            }
                        }
                        gw.data_mut()[widx] = gw.data()[widx] + acc;
                    }
                }
            }
        }
    }
    Ok((gx, gw, gb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::Mask;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rnd(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(dims.to_vec(), |_| rng.gen_range(-1.0..1.0))
    }

    /// Checks d(sum(out ⊙ weights))/d(param) against central differences for
    /// every parameter element.
    fn gradcheck(
        params: Vec<Tensor<f64>>,
        build: impl Fn(&mut Graph<'_, f64>, &[Var]) -> Var,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let eval = |ps: &[Tensor<f64>]| -> Tensor<f64> {
            let mut g = Graph::<f64>::inference();
            let vars: Vec<Var> = ps.iter().map(|p| g.param(p)).collect();
            let out = build(&mut g, &vars);
            g.value(out).clone()
        };
        let y0 = eval(&params);
        let weights = Tensor::from_fn(y0.dims().to_vec(), |_| rng.gen_range(-1.0..1.0));
        let loss = |ps: &[Tensor<f64>]| {
            eval(ps)
                .data().iter().zip(weights.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = params.iter().map(|p| g.param(p)).collect();
        let out = build(&mut g, &vars);
        let grads = g.backward(vec![(out, weights.clone())]).unwrap();
        let h = 1e-6;
        for (pi, p) in params.iter().enumerate() {
            let analytic = grads.get(vars[pi]).expect("param gradient");
            for e in 0..p.len() {
                let mut ps = params.clone();
                ps[pi].data_mut()[e] += h;
                let up = loss(&ps);
                ps[pi].data_mut()[e] -= 2.0 * h;
                let dn = loss(&ps);
                let fd = (up - dn) / (2.0 * h);
                let a = analytic.data()[e];
                assert!(
                    (fd - a).abs() <= 1e-6 + 1e-5 * fd.abs(),
                    "param {pi} elem {e}: fd {fd} analytic {a}"
                );
            }
        }
    }

    #[test]
    fn linear_layernorm_gelu_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = vec![
            rnd(&[3, 4], &mut rng),
            rnd(&[4, 5], &mut rng),
            rnd(&[5], &mut rng),
            rnd(&[5], &mut rng),
            rnd(&[5], &mut rng),
        ];
        gradcheck(params, |g, v| {
            let y = g.linear(v[0], v[1], v[2]).unwrap();
            let y = g.layer_norm(y, v[3], v[4]).unwrap();
            let y = g.gelu(y);
            let z = g.relu(y);
            g.add(y, z).unwrap()
        });
    }

    #[test]
    fn attention_and_row_embedding_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = vec![
            rnd(&[6, 4], &mut rng),
            rnd(&[4, 4], &mut rng),
            rnd(&[3, 4], &mut rng),
        ];
        let mask = Mask::from_fn(6, 6, |i, j| j / 2 <= i / 2);
        gradcheck(params, move |g, v| {
            let x = g.add_rows(v[0], v[2], vec![0, 1, 2, 0, 1, 2]).unwrap();
            let q = g.matmul(x, v[1]).unwrap();
            g.attention(q, x, x, 2, KeyMask::Dense(&mask)).unwrap()
        });
    }

    #[test]
    fn conv_unpatchify_heads_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // 2 frames of 4x4 with 2x2 patches -> 8 patch rows of 3·4 columns
        let params = vec![
            rnd(&[8, 12], &mut rng),
            rnd(&[3, 3, 3, 3], &mut rng),
            rnd(&[3], &mut rng),
        ];
        gradcheck(params, |g, v| {
            let m = g.unpatchify(v[0], 2, 4, 4, 2).unwrap();
            let c = g.conv3x3(m, v[1], v[2]).unwrap();
            let e = g.exp_channel(c, 2).unwrap();
            g.normalize_vec3(e).unwrap()
        });
    }

    #[test]
    fn patchify_inverts_unpatchify() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rnd(&[2, 3, 4, 6], &mut rng);
        let p = patchify(&x, 2).unwrap();
        assert_eq!(p.dims(), &[12, 12]);
        assert_eq!(unpatchify(&p, 2, 4, 6, 2).unwrap(), x);
    }

    #[test]
    fn inference_graph_refuses_backward() {
        let t = Tensor::<f32>::zeros([1, 1]);
        let mut g = Graph::inference();
        let v = g.param(&t);
        assert!(g.backward(vec![(v, Tensor::zeros([1, 1]))]).is_err());
    }
}
