use rand::Rng;

use super::partition::Mask;
use crate::error::{Error, Result};
use crate::tensor::{dot, lit, matmul, Real, Tensor};

/// Which keys each query row may see.
#[derive(Clone, Copy, Debug)]
pub enum KeyMask<'a> {
    /// Every key.
    All,
    /// Explicit token-level mask.
    Dense(&'a Mask),
    /// Block-diagonal: query `i` sees keys of its own frame only. Requires
    /// equal query and key counts.
    FrameLocal { tokens_per_frame: usize },
}

impl KeyMask<'_> {
    /// Half-open key range bracketing every allowed key of `row`.
    fn span(&self, row: usize, keys: usize) -> (usize, usize) {
        match *self {
            KeyMask::All => (0, keys),
            KeyMask::Dense(m) => {
                let r = m.row(row);
                match r.iter().position(|&b| b) {
                    Some(lo) => (lo, r.iter().rposition(|&b| b).unwrap() + 1),
                    None => (0, 0),
                }
            }
            KeyMask::FrameLocal { tokens_per_frame } => {
                let lo = row / tokens_per_frame * tokens_per_frame;
                (lo, (lo + tokens_per_frame).min(keys))
            }
        }
    }

    #[inline]
    fn allows(&self, row: usize, col: usize) -> bool {
        match *self {
            KeyMask::Dense(m) => m.get(row, col),
            _ => true,
        }
    }

    fn check(&self, queries: usize, keys: usize) -> Result<()> {
        match *self {
            KeyMask::All => Ok(()),
            KeyMask::Dense(m) if m.rows() == queries && m.cols() == keys => Ok(()),
            KeyMask::Dense(m) => Err(Error::shape(format!(
                "mask is {}x{} but attention is {}x{}",
                m.rows(),
                m.cols(),
                queries,
                keys
            ))),
            KeyMask::FrameLocal { tokens_per_frame } => {
                if tokens_per_frame == 0 || queries != keys || !queries.is_multiple_of(tokens_per_frame) {
                    Err(Error::shape(format!(
                        "frame-local attention over {queries} queries / {keys} keys with {tokens_per_frame} tokens per frame"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Attention probabilities kept for the backward pass. Row `i` stores
/// probabilities for keys `spans[i].0..spans[i].1` (masked keys inside the
/// span hold zero), identically laid out for every head.
#[derive(Clone, Debug)]
pub struct AttentionProbs<T> {
    pub heads: usize,
    pub spans: Vec<(usize, usize)>,
    pub offsets: Vec<usize>,
    pub values: Vec<Vec<T>>,
}

/// Scaled dot-product attention over `heads` contiguous column blocks of
/// already projected queries, keys and values.
///
/// For every row the softmax runs over allowed keys in ascending key order,
/// and the value sum is accumulated in the same order. Masked keys are
/// skipped outright, so they cannot influence the result in any bit.
pub fn attention_kernel<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
    mask: KeyMask<'_>,
    keep_probs: bool,
) -> Result<(Tensor<T>, Option<AttentionProbs<T>>)> {
    let (nq, d) = q.matrix_dims()?;
    let (nk, dk) = k.matrix_dims()?;
    if dk != d || v.dims() != k.dims() {
        return Err(Error::shape(format!(
            "attention q {:?} k {:?} v {:?}",
            q.dims(),
            k.dims(),
            v.dims()
        )));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!(
            "width {d} not divisible by {heads} heads"
        )));
    }
    mask.check(nq, nk)?;
    let dh = d / heads;
    let scale = T::one() / lit::<T>(dh as f64).sqrt();

    let spans: Vec<(usize, usize)> = (0..nq).map(|i| mask.span(i, nk)).collect();
    let mut offsets = Vec::with_capacity(nq);
    let mut total = 0;
    for &(lo, hi) in &spans {
        offsets.push(total);
        total += hi - lo;
    }

    let mut out = Tensor::zeros([nq, d]);
    let mut kept = Vec::new();
    let mut probs = vec![T::zero(); total];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..nq {
            let (lo, hi) = spans[i];
            let row_probs = &mut probs[offsets[i]..offsets[i] + (hi - lo)];
            let qi = &q.row(i)[cols.clone()];
            let mut max = T::neg_infinity();
            let mut any = false;
            for j in lo..hi {
                if !mask.allows(i, j) {
                    continue;
                }
                let s = dot(qi, &k.row(j)[cols.clone()]) * scale;
                row_probs[j - lo] = s;
                max = max.max(s);
                any = true;
            }
            if !any {
                return Err(Error::Contract(format!(
                    "attention row {i} has no visible key"
                )));
            }
            let mut sum = T::zero();
            for j in lo..hi {
                if mask.allows(i, j) {
                    let e = (row_probs[j - lo] - max).exp();
                    row_probs[j - lo] = e;
                    sum = sum + e;
                } else {
                    row_probs[j - lo] = T::zero();
                }
            }
            let inv = T::one() / sum;
            let orow = &mut out.row_mut(i)[cols.clone()];
            for j in lo..hi {
                if !mask.allows(i, j) {
                    continue;
                }
                let p = row_probs[j - lo] * inv;
                row_probs[j - lo] = p;
                for (o, &vv) in orow.iter_mut().zip(&v.row(j)[cols.clone()]) {
                    *o = *o + p * vv;
                }
            }
        }
        if keep_probs {
            kept.push(probs.clone());
        }
    }
    let probs = keep_probs.then_some(AttentionProbs {
        heads,
        spans,
        offsets,
        values: kept,
    });
    Ok((out, probs))
}

/// Gradients of [`attention_kernel`] with respect to `q`, `k`, `v`.
pub fn attention_kernel_backward<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    probs: &AttentionProbs<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (nq, d) = q.matrix_dims()?;
    let heads = probs.heads;
    let dh = d / heads;
    let scale = T::one() / lit::<T>(dh as f64).sqrt();
    let mut dq = Tensor::zeros(q.dims().to_vec());
    let mut dk = Tensor::zeros(k.dims().to_vec());
    let mut dv = Tensor::zeros(v.dims().to_vec());
    let mut dp = Vec::new();
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let pv = &probs.values[h];
        for i in 0..nq {
            let (lo, hi) = probs.spans[i];
            let p = &pv[probs.offsets[i]..probs.offsets[i] + (hi - lo)];
            let go = &grad_out.row(i)[cols.clone()];
            dp.clear();
            let mut weighted = T::zero();
            for j in lo..hi {
                let g = dot(go, &v.row(j)[cols.clone()]);
                dp.push(g);
                weighted = weighted + g * p[j - lo];
            }
            for j in lo..hi {
                let pj = p[j - lo];
                if pj == T::zero() {
                    continue;
                }
                for (dvv, &g) in dv.row_mut(j)[cols.clone()].iter_mut().zip(go) {
                    *dvv = *dvv + pj * g;
                }
                let ds = pj * (dp[j - lo] - weighted) * scale;
                let kj = &k.row(j)[cols.clone()];
                for (dqq, &kk) in dq.row_mut(i)[cols.clone()].iter_mut().zip(kj) {
                    *dqq = *dqq + ds * kk;
                }
                let qi = &q.row(i)[cols.clone()];
                for (dkk, &qq) in dk.row_mut(j)[cols.clone()].iter_mut().zip(qi) {
                    *dkk = *dkk + ds * qq;
                }
            }
        }
    }
    Ok((dq, dk, dv))
}

/// Projection parameters of one multi-head attention layer. Matrices act on
/// row vectors (`x · W + b`).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights<T = f32> {
    pub heads: usize,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub bq: Tensor<T>,
    pub bk: Tensor<T>,
    pub bv: Tensor<T>,
    pub bo: Tensor<T>,
}

impl<T: Real> AttentionWeights<T> {
    pub fn random<R: Rng + ?Sized>(dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "width {dim} not divisible by {heads} heads"
            )));
        }
        let bound = 1.0 / (dim as f64).sqrt();
        let mut mat = || Tensor::from_fn([dim, dim], |_| lit(rng.gen_range(-bound..bound)));
        let (wq, wk, wv, wo) = (mat(), mat(), mat(), mat());
        let mut vecb = || Tensor::from_fn([dim], |_| lit(rng.gen_range(-0.1..0.1)));
        Ok(AttentionWeights {
            heads,
            wq,
            wk,
            wv,
            wo,
            bq: vecb(),
            bk: vecb(),
            bv: vecb(),
            bo: vecb(),
        })
    }

    pub fn dim(&self) -> usize {
        self.wq.dims()[0]
    }

    pub fn cast<U: Real>(&self) -> AttentionWeights<U> {
        AttentionWeights {
            heads: self.heads,
            wq: self.wq.cast(),
            wk: self.wk.cast(),
            wv: self.wv.cast(),
            wo: self.wo.cast(),
            bq: self.bq.cast(),
            bk: self.bk.cast(),
            bv: self.bv.cast(),
            bo: self.bo.cast(),
        }
    }

    /// Query, key and value projections of `x`.
    pub fn project(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        Ok((
            affine(x, &self.wq, &self.bq)?,
            affine(x, &self.wk, &self.bk)?,
            affine(x, &self.wv, &self.bv)?,
        ))
    }

    pub fn output(&self, heads_out: &Tensor<T>) -> Result<Tensor<T>> {
        affine(heads_out, &self.wo, &self.bo)
    }
}

/// `x · w + b` with `b` broadcast over rows.
pub fn affine<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut y = matmul(x, w)?;
    let n = y.last_dim();
    if b.len() != n {
        return Err(Error::shape(format!(
            "bias {:?} for output width {n}",
            b.dims()
        )));
    }
    for row in y.data_mut().chunks_mut(n) {
        for (o, &bb) in row.iter_mut().zip(b.data()) {
            *o = *o + bb;
        }
    }
    Ok(y)
}

/// Multi-head self-attention over all tokens in one pass, restricted by a
/// token-level mask.
pub fn attend_full<T: Real>(
    x: &Tensor<T>,
    weights: &AttentionWeights<T>,
    mask: &Mask,
) -> Result<Tensor<T>> {
    let (q, k, v) = weights.project(x)?;
    let (heads_out, _) = attention_kernel(&q, &k, &v, weights.heads, KeyMask::Dense(mask), false)?;
    weights.output(&heads_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct-definition multi-head attention in f64.
    fn oracle(x: &Tensor<f64>, w: &AttentionWeights<f64>, mask: &Mask) -> Tensor<f64> {
        let n = x.dims()[0];
        let d = w.dim();
        let dh = d / w.heads;
        let proj = |m: &Tensor<f64>, b: &Tensor<f64>| {
            let mut out = vec![0.0; n * d];
            for i in 0..n {
                for j in 0..d {
                    let mut s = b.data()[j];
                    for k in 0..d {
                        s += x.at2(i, k) * m.at2(k, j);
                    }
                    out[i * d + j] = s;
                }
            }
            out
        };
        let (q, k, v) = (proj(&w.wq, &w.bq), proj(&w.wk, &w.bk), proj(&w.wv, &w.bv));
        let mut heads = vec![0.0; n * d];
        for h in 0..w.heads {
            for i in 0..n {
                let s: Vec<f64> = (0..n)
                    .map(|j| {
                        (0..dh)
                            .map(|c| q[i * d + h * dh + c] * k[j * d + h * dh + c])
                            .sum::<f64>()
                            / (dh as f64).sqrt()
                    })
                    .collect();
                let z: f64 = (0..n).filter(|&j| mask.get(i, j)).map(|j| s[j].exp()).sum();
                for j in (0..n).filter(|&j| mask.get(i, j)) {
                    let p = s[j].exp() / z;
                    for c in 0..dh {
                        heads[i * d + h * dh + c] += p * v[j * d + h * dh + c];
                    }
                }
            }
        }
        let ht = Tensor::new([n, d], heads).unwrap();
        affine(&ht, &w.wo, &w.bo).unwrap()
    }

    #[test]
    fn single_token_is_value_then_output_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w = AttentionWeights::<f32>::random(8, 2, &mut rng).unwrap();
        let x = Tensor::from_fn([1, 8], |_| rng.gen_range(-1.0f32..1.0));
        let y = attend_full(&x, &w, &Mask::ones(1, 1)).unwrap();
        let expect = w.output(&affine(&x, &w.wv, &w.bv).unwrap()).unwrap();
        assert_eq!(y, expect);
    }

    #[test]
    fn identity_mask_attends_to_self_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let w = AttentionWeights::<f32>::random(8, 2, &mut rng).unwrap();
        let x = Tensor::from_fn([3, 8], |_| rng.gen_range(-1.0f32..1.0));
        let y = attend_full(&x, &w, &Mask::identity(3)).unwrap();
        let expect = w.output(&affine(&x, &w.wv, &w.bv).unwrap()).unwrap();
        assert!(y.max_abs_diff(&expect).unwrap() <= 1e-6);
    }

    #[test]
    fn matches_f64_direct_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let w = AttentionWeights::<f32>::random(8, 2, &mut rng).unwrap();
        let x = Tensor::from_fn([4, 8], |_| rng.gen_range(-1.0f32..1.0));
        let mask = Mask::from_fn(4, 4, |i, j| j <= i || (i + j) % 3 == 0);
        let y = attend_full(&x, &w, &mask).unwrap();
        let want = oracle(&x.cast(), &w.cast(), &mask);
        assert!(y.cast::<f64>().max_abs_diff(&want).unwrap() <= 1e-5);
    }

    #[test]
    fn frame_local_equals_block_diagonal_dense_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let (q, k, v) = (
            Tensor::from_fn([6, 4], |_| rng.gen_range(-1.0f32..1.0)),
            Tensor::from_fn([6, 4], |_| rng.gen_range(-1.0f32..1.0)),
            Tensor::from_fn([6, 4], |_| rng.gen_range(-1.0f32..1.0)),
        );
        let dense = Mask::from_fn(6, 6, |i, j| i / 2 == j / 2);
        let (a, _) = attention_kernel(&q, &k, &v, 2, KeyMask::Dense(&dense), false).unwrap();
        let (b, _) =
            attention_kernel(&q, &k, &v, 2, KeyMask::FrameLocal { tokens_per_frame: 2 }, false)
                .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let w = AttentionWeights::<f32>::random(8, 2, &mut rng).unwrap();
        let x = Tensor::<f32>::zeros([3, 8]);
        assert!(matches!(
            attend_full(&x, &w, &Mask::ones(2, 2)),
            Err(Error::Shape(_))
        ));
        assert!(AttentionWeights::<f32>::random(8, 3, &mut rng).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let mk = |rng: &mut ChaCha8Rng| Tensor::<f64>::from_fn([5, 4], |_| rng.gen_range(-1.0..1.0));
        let (q, k, v) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let g = mk(&mut rng);
        let mask = Mask::from_fn(5, 5, |i, j| j <= i + 1);
        let f = |q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>| {
            let (o, _) = attention_kernel(q, k, v, 2, KeyMask::Dense(&mask), false).unwrap();
            o.data().iter().zip(g.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, probs) = attention_kernel(&q, &k, &v, 2, KeyMask::Dense(&mask), true).unwrap();
        let (dq, dk, dv) = attention_kernel_backward(&q, &k, &v, &probs.unwrap(), &g).unwrap();
        let h = 1e-6;
        for idx in 0..20 {
            for (which, grad) in [(0, &dq), (1, &dk), (2, &dv)] {
                let mut ts = [q.clone(), k.clone(), v.clone()];
                ts[which].data_mut()[idx] += h;
                let up = f(&ts[0], &ts[1], &ts[2]);
                ts[which].data_mut()[idx] -= 2.0 * h;
                let dn = f(&ts[0], &ts[1], &ts[2]);
                let fd = (up - dn) / (2.0 * h);
                assert!((fd - grad.data()[idx]).abs() < 1e-6, "{which} {idx}");
            }
        }
    }
}
