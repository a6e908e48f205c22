use std::fmt;
use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};

/// Ordered split of a frame sequence into contiguous chunks.
///
/// Frames attend bidirectionally inside their chunk and causally to all
/// earlier chunks. `[N]` is offline inference, `[1; N]` is streaming.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ChunkPartition {
    lengths: Vec<usize>,
}

impl fmt::Debug for ChunkPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChunkPartition{:?}", self.lengths)
    }
}

impl ChunkPartition {
    pub fn new(lengths: Vec<usize>) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::Config("chunk partition has no chunks".into()));
        }
        if let Some(pos) = lengths.iter().position(|&l| l == 0) {
            return Err(Error::Config(format!("chunk {pos} has length 0")));
        }
        Ok(ChunkPartition { lengths })
    }

    /// A single chunk holding all `n` frames.
    pub fn full(n: usize) -> Result<Self> {
        Self::new(vec![n])
    }

    /// One frame per chunk.
    pub fn streaming(n: usize) -> Result<Self> {
        Self::new(vec![1; n])
    }

    /// `⌈n/c⌉` chunks of size `c`; the last one may be shorter.
    pub fn chunked(n: usize, c: usize) -> Result<Self> {
        if c == 0 {
            return Err(Error::Config("chunk size must be at least 1".into()));
        }
        let mut lengths = vec![c; n / c];
        if !n.is_multiple_of(c) {
            lengths.push(n % c);
        }
        Self::new(lengths)
    }

    /// Random partition of `n` frames with chunk lengths in `1..=max_len`.
    pub fn random<R: Rng + ?Sized>(n: usize, max_len: usize, rng: &mut R) -> Result<Self> {
        let mut lengths = Vec::new();
        let mut left = n;
        while left > 0 {
            let l = rng.gen_range(1..=max_len.max(1).min(left));
            lengths.push(l);
            left -= l;
        }
        Self::new(lengths)
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn num_frames(&self) -> usize {
        self.lengths.iter().sum()
    }

    pub fn num_chunks(&self) -> usize {
        self.lengths.len()
    }

    /// Frame index ranges of each chunk, in order.
    pub fn ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.lengths
            .iter()
            .map(|&l| {
                let r = start..start + l;
                start += l;
                r
            })
            .collect()
    }

    /// `ch(i)` for every frame.
    pub fn chunk_of_frames(&self) -> Vec<usize> {
        self.lengths
            .iter()
            .enumerate()
            .flat_map(|(c, &l)| std::iter::repeat_n(c, l))
            .collect()
    }
}

/// Dense boolean matrix; `true` means "query row may attend to key column".
#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl fmt::Debug for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mask {}x{}", self.rows, self.cols)?;
        for i in 0..self.rows {
            let line: String = (0..self.cols)
                .map(|j| if self.get(i, j) { '1' } else { '0' })
                .collect();
            writeln!(f, "  {line}")?;
        }
        Ok(())
    }
}

impl Mask {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                bits.push(f(i, j));
            }
        }
        Mask { rows, cols, bits }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn lower_triangular(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| j <= i)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| i == j)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.bits[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.cols..(i + 1) * self.cols]
    }

    /// Mask as a 0/1 float matrix, the form `masked_softmax` consumes.
    pub fn to_tensor<T: crate::tensor::Real>(&self) -> crate::tensor::Tensor<T> {
        crate::tensor::Tensor::from_fn([self.rows, self.cols], |k| {
            if self.bits[k] {
                T::one()
            } else {
                T::zero()
            }
        })
    }
}

/// Frame-level attention mask: entry `(i, j)` is set iff `ch(j) <= ch(i)`.
pub fn build_mask(partition: &ChunkPartition) -> Mask {
    let ch = partition.chunk_of_frames();
    let n = ch.len();
    Mask::from_fn(n, n, |i, j| ch[j] <= ch[i])
}

/// Kronecker expansion of a frame mask to token level, with frames laid out
/// contiguously (`tokens_per_frame` consecutive tokens per frame).
pub fn expand_mask(frame_mask: &Mask, tokens_per_frame: usize) -> Result<Mask> {
    if tokens_per_frame == 0 {
        return Err(Error::Config("tokens_per_frame must be at least 1".into()));
    }
    let t = tokens_per_frame;
    Ok(Mask::from_fn(
        frame_mask.rows * t,
        frame_mask.cols * t,
        |p, q| frame_mask.get(p / t, q / t),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rows(m: &Mask) -> Vec<Vec<u8>> {
        (0..m.rows())
            .map(|i| m.row(i).iter().map(|&b| b as u8).collect())
            .collect()
    }

    #[test]
    fn single_chunk_is_full_attention() {
        let m = build_mask(&ChunkPartition::full(3).unwrap());
        assert_eq!(m, Mask::ones(3, 3));
    }

    #[test]
    fn unit_chunks_are_causal() {
        let m = build_mask(&ChunkPartition::streaming(3).unwrap());
        assert_eq!(m, Mask::lower_triangular(3));
    }

    #[test]
    fn two_then_one() {
        let m = build_mask(&ChunkPartition::new(vec![2, 1]).unwrap());
        assert_eq!(rows(&m), vec![vec![1, 1, 0], vec![1, 1, 0], vec![1, 1, 1]]);
    }

    #[test]
    fn expand_causal_pair() {
        let m = build_mask(&ChunkPartition::streaming(2).unwrap());
        let t = expand_mask(&m, 2).unwrap();
        assert_eq!(
            rows(&t),
            vec![
                vec![1, 1, 0, 0],
                vec![1, 1, 0, 0],
                vec![1, 1, 1, 1],
                vec![1, 1, 1, 1]
            ]
        );
    }

    #[test]
    fn expand_by_one_is_identity() {
        let m = build_mask(&ChunkPartition::new(vec![1, 3, 2]).unwrap());
        assert_eq!(expand_mask(&m, 1).unwrap(), m);
        assert!(expand_mask(&m, 0).is_err());
    }

    #[test]
    fn expand_matches_per_token_predicate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let p = ChunkPartition::random(4, 4, &mut rng).unwrap();
            let ch = p.chunk_of_frames();
            let t = expand_mask(&build_mask(&p), 3).unwrap();
            for a in 0..12 {
                for b in 0..12 {
                    assert_eq!(t.get(a, b), ch[b / 3] <= ch[a / 3]);
                }
            }
        }
    }

    #[test]
    fn chunked_schedule_has_short_tail() {
        let p = ChunkPartition::chunked(10, 4).unwrap();
        assert_eq!(p.lengths(), &[4, 4, 2]);
        assert_eq!(p.ranges(), vec![0..4, 4..8, 8..10]);
        assert!(ChunkPartition::new(vec![2, 0]).is_err());
        assert!(ChunkPartition::chunked(3, 0).is_err());
    }

    #[test]
    fn mask_rows_never_empty_and_diagonal_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let n = rng.gen_range(1..=12);
            let m = build_mask(&ChunkPartition::random(n, n, &mut rng).unwrap());
            for i in 0..n {
                assert!(m.get(i, i));
            }
        }
    }
}
