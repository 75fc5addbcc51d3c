//! Multilevel Haar analysis/synthesis along the sequence axis of
//! [batch, heads, seq, dim] tensors.
//!
//! One analysis level maps adjacent pairs to sums and differences:
//! a[k] = (x[2k] + x[2k+1])/sqrt(2), d[k] = (x[2k] - x[2k+1])/sqrt(2);
//! synthesis inverts exactly. The transform is orthonormal, so energy is
//! preserved and the adjoint equals the inverse; the autograd module leans
//! on that to reuse these kernels as their own backward passes.
//!
//! Sequences are zero-padded to `padded_len = max(next_pow2(n), 2^levels)`
//! so every level halves an even length, and reconstruction trims back to
//! the original n. Coefficients travel in one of two equivalent forms:
//! a [`WaveletPyramid`] with separate blocks ordered [d1, d2, .., dL, aL],
//! or a single "packed" tensor holding those blocks concatenated along the
//! sequence axis (their lengths sum to exactly `padded_len`).

use std::collections::HashMap;

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

/// Guard against absurd level counts; 2^30 already exceeds any sequence
/// length this crate is used at.
pub const MAX_LEVELS: usize = 30;

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveletError {
    #[error("levels must lie in 1..={MAX_LEVELS}, got {0}")]
    InvalidLevels(usize),
    #[error("expected a rank-4 [batch, heads, seq, dim] tensor, got shape {0:?}")]
    NotRank4(Vec<usize>),
    #[error("pyramid block {index} has shape {got:?}, expected {want:?}")]
    BlockShape {
        index: usize,
        got: Vec<usize>,
        want: Vec<usize>,
    },
    #[error("filter shape {got:?} does not match expected {want:?}")]
    FilterShape { got: Vec<usize>, want: Vec<usize> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type WaveletResult<T> = Result<T, WaveletError>;

/// Sequence length after zero padding: the next power of two >= n, raised
/// further to 2^levels when n is too short for the requested depth.
pub fn padded_len(n: usize, levels: usize) -> WaveletResult<usize> {
    if levels == 0 || levels > MAX_LEVELS {
        return Err(WaveletError::InvalidLevels(levels));
    }
    Ok(n.next_power_of_two().max(1usize << levels))
}

/// (offset, len) of each coefficient block inside a packed tensor of
/// sequence length `padded`: detail levels 1..=L, then the final approx.
pub fn packed_blocks(padded: usize, levels: usize) -> Vec<(usize, usize)> {
    let mut blocks = Vec::with_capacity(levels + 1);
    let mut off = 0;
    for lv in 1..=levels {
        let len = padded >> lv;
        blocks.push((off, len));
        off += len;
    }
    blocks.push((off, padded >> levels));
    blocks
}

fn check_rank4(x: &Tensor) -> WaveletResult<(usize, usize, usize, usize)> {
    match x.shape() {
        [b, h, n, d] => Ok((*b, *h, *n, *d)),
        other => Err(WaveletError::NotRank4(other.to_vec())),
    }
}

// ---------------------------------------------------------------------------
// Packed kernels

/// Full analysis: [b, h, n, d] -> packed [b, h, padded, d].
pub fn dwt_packed(x: &Tensor, levels: usize) -> WaveletResult<Tensor> {
    let (b, h, n, d) = check_rank4(x)?;
    let padded = padded_len(n, levels)?;
    let rows = b * h;
    let blocks = packed_blocks(padded, levels);
    let mut out = vec![0.0; rows * padded * d];

    // `cur` holds the running approximation per row. Both scratch buffers
    // keep the full padded row stride so row offsets survive the swap below.
    let mut cur = vec![0.0; rows * padded * d];
    for row in 0..rows {
        let src = &x.data()[row * n * d..(row + 1) * n * d];
        cur[row * padded * d..row * padded * d + n * d].copy_from_slice(src);
    }
    let mut next = vec![0.0; rows * padded * d];

    let mut cur_len = padded;
    for lv in 1..=levels {
        let half = cur_len / 2;
        let (det_off, det_len) = blocks[lv - 1];
        debug_assert_eq!(det_len, half);
        for row in 0..rows {
            let cbase = row * padded * d;
            let nbase = row * padded * d;
            let obase = (row * padded + det_off) * d;
            for k in 0..half {
                let e = cbase + 2 * k * d;
                let o = cbase + (2 * k + 1) * d;
                for dd in 0..d {
                    let a = cur[e + dd];
                    let bb = cur[o + dd];
                    next[nbase + k * d + dd] = (a + bb) * INV_SQRT2;
                    out[obase + k * d + dd] = (a - bb) * INV_SQRT2;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
        cur_len = half;
    }
    // Final approximation block.
    let (a_off, a_len) = blocks[levels];
    debug_assert_eq!(a_len, cur_len);
    for row in 0..rows {
        let cbase = row * padded * d;
        let obase = (row * padded + a_off) * d;
        out[obase..obase + a_len * d].copy_from_slice(&cur[cbase..cbase + a_len * d]);
    }
    Ok(Tensor::new(vec![b, h, padded, d], out)?)
}

/// Full synthesis: packed [b, h, padded, d] -> [b, h, orig_len, d].
/// The adjoint of `dwt_packed`, which is also its exact inverse.
pub fn idwt_packed(packed: &Tensor, levels: usize, orig_len: usize) -> WaveletResult<Tensor> {
    let (b, h, padded, d) = check_rank4(packed)?;
    let expect = padded_len(orig_len, levels)?;
    if padded != expect || orig_len > padded {
        return Err(WaveletError::BlockShape {
            index: 0,
            got: packed.shape().to_vec(),
            want: vec![b, h, expect, d],
        });
    }
    let rows = b * h;
    let blocks = packed_blocks(padded, levels);

    let mut cur = vec![0.0; rows * padded * d];
    let mut next = vec![0.0; rows * padded * d];
    // Seed with the approximation block.
    let (a_off, a_len) = blocks[levels];
    for row in 0..rows {
        let src = (row * padded + a_off) * d;
        cur[row * padded * d..row * padded * d + a_len * d]
            .copy_from_slice(&packed.data()[src..src + a_len * d]);
    }
    let mut cur_len = a_len;
    for lv in (1..=levels).rev() {
        let (det_off, det_len) = blocks[lv - 1];
        debug_assert_eq!(det_len, cur_len);
        for row in 0..rows {
            let cbase = row * padded * d;
            let dbase = (row * padded + det_off) * d;
            for k in 0..cur_len {
                for dd in 0..d {
                    let a = cur[cbase + k * d + dd];
                    let det = packed.data()[dbase + k * d + dd];
                    next[cbase + 2 * k * d + dd] = (a + det) * INV_SQRT2;
                    next[cbase + (2 * k + 1) * d + dd] = (a - det) * INV_SQRT2;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
        cur_len *= 2;
    }
    debug_assert_eq!(cur_len, padded);
    let mut out = vec![0.0; rows * orig_len * d];
    for row in 0..rows {
        let src = row * padded * d;
        out[row * orig_len * d..(row + 1) * orig_len * d]
            .copy_from_slice(&cur[src..src + orig_len * d]);
    }
    Ok(Tensor::new(vec![b, h, orig_len, d], out)?)
}

/// Multiply each coefficient block by a per-batch gate: block i of batch
/// element `bi` is scaled by `gate[bi, i]`. Gate shape [b, levels + 1].
pub fn scale_packed_blocks(packed: &Tensor, levels: usize, gate: &Tensor) -> WaveletResult<Tensor> {
    let (b, h, padded, d) = check_rank4(packed)?;
    if gate.shape() != [b, levels + 1] {
        return Err(WaveletError::FilterShape {
            got: gate.shape().to_vec(),
            want: vec![b, levels + 1],
        });
    }
    let blocks = packed_blocks(padded, levels);
    if blocks.iter().map(|&(_, l)| l).sum::<usize>() != padded {
        return Err(WaveletError::InvalidLevels(levels));
    }
    let mut out = packed.data().to_vec();
    for bi in 0..b {
        for hi in 0..h {
            let row = (bi * h + hi) * padded * d;
            for (i, &(off, len)) in blocks.iter().enumerate() {
                let g = gate.data()[bi * (levels + 1) + i];
                for v in &mut out[row + off * d..row + (off + len) * d] {
                    *v *= g;
                }
            }
        }
    }
    Ok(Tensor::new(packed.shape().to_vec(), out)?)
}

/// Gradient of `scale_packed_blocks` with respect to the gate:
/// dgate[b, i] = sum over heads, positions in block i, and dims of
/// grad * packed.
pub fn scale_packed_gate_grad(
    packed: &Tensor,
    levels: usize,
    grad: &Tensor,
) -> WaveletResult<Tensor> {
    let (b, h, padded, d) = check_rank4(packed)?;
    if grad.shape() != packed.shape() {
        return Err(WaveletError::BlockShape {
            index: 0,
            got: grad.shape().to_vec(),
            want: packed.shape().to_vec(),
        });
    }
    let blocks = packed_blocks(padded, levels);
    let mut out = vec![0.0; b * (levels + 1)];
    for bi in 0..b {
        for hi in 0..h {
            let row = (bi * h + hi) * padded * d;
            for (i, &(off, len)) in blocks.iter().enumerate() {
                let mut acc = 0.0;
                let lo = row + off * d;
                let hi_ = row + (off + len) * d;
                for (p, g) in packed.data()[lo..hi_].iter().zip(&grad.data()[lo..hi_]) {
                    acc += p * g;
                }
                out[bi * (levels + 1) + i] += acc;
            }
        }
    }
    Ok(Tensor::new(vec![b, levels + 1], out)?)
}

// ---------------------------------------------------------------------------
// Pyramid form

/// Haar coefficients as separate blocks: details for levels 1..=L in order,
/// then the level-L approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPyramid {
    pub blocks: Vec<Tensor>,
    pub orig_len: usize,
    pub levels: usize,
    pub padded_len: usize,
}

/// Analyze `x` ([b, h, n, d]) to `levels` Haar levels.
pub fn dwt(x: &Tensor, levels: usize) -> WaveletResult<WaveletPyramid> {
    let packed = dwt_packed(x, levels)?;
    let (b, h, n, d) = check_rank4(x)?;
    let padded = padded_len(n, levels)?;
    let blocks = split_packed(&packed, levels)?;
    debug_assert_eq!(blocks.len(), levels + 1);
    let _ = (b, h, d);
    Ok(WaveletPyramid {
        blocks,
        orig_len: n,
        levels,
        padded_len: padded,
    })
}

/// Exact reconstruction; trims back to `orig_len`.
pub fn idwt(p: &WaveletPyramid) -> WaveletResult<Tensor> {
    let packed = pack_pyramid(p)?;
    idwt_packed(&packed, p.levels, p.orig_len)
}

/// Reconstruction after gating each block: block i is multiplied by
/// `filters[b, i] * scale_weights[i]` before synthesis. Filters are
/// per-batch-element gates of shape [b, levels + 1]; scale weights are a
/// shared [levels + 1] vector.
pub fn filtered_idwt(
    p: &WaveletPyramid,
    filters: &Tensor,
    scale_weights: &Tensor,
) -> WaveletResult<Tensor> {
    let packed = pack_pyramid(p)?;
    let (b, _h, _padded, _d) = check_rank4(&packed)?;
    let nb = p.levels + 1;
    if scale_weights.shape() != [nb] {
        return Err(WaveletError::FilterShape {
            got: scale_weights.shape().to_vec(),
            want: vec![nb],
        });
    }
    if filters.shape() != [b, nb] {
        return Err(WaveletError::FilterShape {
            got: filters.shape().to_vec(),
            want: vec![b, nb],
        });
    }
    let gate = filters.mul(scale_weights)?; // [b, nb] * [nb] broadcasts per row
    let gated = scale_packed_blocks(&packed, p.levels, &gate)?;
    idwt_packed(&gated, p.levels, p.orig_len)
}

/// Concatenate pyramid blocks along the sequence axis, validating shapes.
pub fn pack_pyramid(p: &WaveletPyramid) -> WaveletResult<Tensor> {
    if p.levels == 0 || p.levels > MAX_LEVELS {
        return Err(WaveletError::InvalidLevels(p.levels));
    }
    if p.blocks.len() != p.levels + 1 {
        return Err(WaveletError::InvalidLevels(p.levels));
    }
    let (b, h, _, d) = check_rank4(&p.blocks[0])?;
    let spans = packed_blocks(p.padded_len, p.levels);
    let rows = b * h;
    let mut out = vec![0.0; rows * p.padded_len * d];
    for (i, (block, &(off, len))) in p.blocks.iter().zip(&spans).enumerate() {
        if block.shape() != [b, h, len, d] {
            return Err(WaveletError::BlockShape {
                index: i,
                got: block.shape().to_vec(),
                want: vec![b, h, len, d],
            });
        }
        for row in 0..rows {
            let dst = (row * p.padded_len + off) * d;
            let src = row * len * d;
            out[dst..dst + len * d].copy_from_slice(&block.data()[src..src + len * d]);
        }
    }
    Ok(Tensor::new(vec![b, h, p.padded_len, d], out)?)
}

/// Split a packed tensor into pyramid blocks (inverse of `pack_pyramid`).
pub fn split_packed(packed: &Tensor, levels: usize) -> WaveletResult<Vec<Tensor>> {
    let (b, h, padded, d) = check_rank4(packed)?;
    let spans = packed_blocks(padded, levels);
    if spans.iter().map(|&(_, l)| l).sum::<usize>() != padded {
        return Err(WaveletError::InvalidLevels(levels));
    }
    let rows = b * h;
    let mut blocks = Vec::with_capacity(levels + 1);
    for &(off, len) in &spans {
        let mut data = vec![0.0; rows * len * d];
        for row in 0..rows {
            let src = (row * padded + off) * d;
            data[row * len * d..(row + 1) * len * d]
                .copy_from_slice(&packed.data()[src..src + len * d]);
        }
        blocks.push(Tensor::new(vec![b, h, len, d], data)?);
    }
    Ok(blocks)
}

// ---------------------------------------------------------------------------
// Coefficient cache

/// 64-bit FNV-1a over shapes and raw little-endian f64 bytes. Used as the
/// inference-cache key; collisions are astronomically unlikely at the cache
/// sizes involved but would only trade correctness for staleness on
/// adversarial inputs, which the single-process inference use does not see.
pub fn buffer_digest(tensors: &[&Tensor]) -> u64 {
    fn eat(h: &mut u64, bytes: &[u8]) {
        for &b in bytes {
            *h ^= b as u64;
            *h = h.wrapping_mul(0x100_0000_01b3);
        }
    }
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for t in tensors {
        eat(&mut h, &(t.rank() as u64).to_le_bytes());
        for &e in t.shape() {
            eat(&mut h, &(e as u64).to_le_bytes());
        }
        for &v in t.data() {
            eat(&mut h, &v.to_le_bytes());
        }
    }
    h
}

/// Packed query/key coefficients memoized for inference.
#[derive(Debug, Clone)]
pub struct CachedCoeffs {
    pub q_packed: Tensor,
    pub k_packed: Tensor,
    pub levels: usize,
    pub q_len: usize,
    pub k_len: usize,
}

/// Inference-only memo from input digests to packed coefficients.
///
/// Confined to a single thread (`&mut` access only); training paths must
/// bypass it entirely. `transforms` counts actual analysis passes so tests
/// can observe that a hit skips recomputation.
#[derive(Debug, Default)]
pub struct CoeffCache {
    entries: HashMap<u64, CachedCoeffs>,
    pub hits: u64,
    pub misses: u64,
    pub transforms: u64,
}

impl CoeffCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lookup(&mut self, key: u64) -> Option<CachedCoeffs> {
        match self.entries.get(&key) {
            Some(e) => {
                self.hits += 1;
                Some(e.clone())
            }
            None => {
                self.misses += 1;
                None
            }
        }
    }

    pub fn store(&mut self, key: u64, coeffs: CachedCoeffs) {
        self.entries.insert(key, coeffs);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use crate::tensor::sample_gaussian;

    fn seq(values: &[f64]) -> Tensor {
        Tensor::new(vec![1, 1, values.len(), 1], values.to_vec()).unwrap()
    }

    fn flat(t: &Tensor) -> Vec<f64> {
        t.data().to_vec()
    }

    #[test]
    fn constant_signal_has_zero_details() {
        let p = dwt(&seq(&[1.0, 1.0, 1.0, 1.0]), 1).unwrap();
        let s2 = 2.0_f64.sqrt();
        let a: Vec<f64> = flat(&p.blocks[1]);
        let d: Vec<f64> = flat(&p.blocks[0]);
        assert!((a[0] - s2).abs() < 1e-15 && (a[1] - s2).abs() < 1e-15);
        assert!(d[0].abs() < 1e-15 && d[1].abs() < 1e-15);
    }

    #[test]
    fn one_level_hand_case() {
        // Pairs (1,2) and (3,4): sums 3 and 7, differences -1 and -1, all
        // over sqrt(2).
        let p = dwt(&seq(&[1.0, 2.0, 3.0, 4.0]), 1).unwrap();
        let s2 = 2.0_f64.sqrt();
        let d = flat(&p.blocks[0]);
        let a = flat(&p.blocks[1]);
        assert!((a[0] - 3.0 / s2).abs() < 1e-15);
        assert!((a[1] - 7.0 / s2).abs() < 1e-15);
        assert!((d[0] + 1.0 / s2).abs() < 1e-15);
        assert!((d[1] + 1.0 / s2).abs() < 1e-15);
    }

    #[test]
    fn two_level_hand_case() {
        // Level 2 re-analyzes [3, 7]/sqrt(2): approx (3+7)/2 = 5, detail
        // (3-7)/2 = -2.
        let p = dwt(&seq(&[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert_eq!(p.blocks.len(), 3);
        let d1 = flat(&p.blocks[0]);
        let d2 = flat(&p.blocks[1]);
        let a2 = flat(&p.blocks[2]);
        let s2 = 2.0_f64.sqrt();
        assert!((d1[0] + 1.0 / s2).abs() < 1e-15 && (d1[1] + 1.0 / s2).abs() < 1e-15);
        assert!((d2[0] + 2.0).abs() < 1e-14);
        assert!((a2[0] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn roundtrip_trims_padding() {
        // n = 5 pads to 8; reconstruction must return exactly 5 samples.
        let x = seq(&[0.5, -1.0, 2.0, 3.5, -0.25]);
        let p = dwt(&x, 2).unwrap();
        assert_eq!(p.padded_len, 8);
        let y = idwt(&p).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(x.max_abs_diff(&y) < 1e-12);
    }

    #[test]
    fn single_sample_pads_to_depth() {
        let x = seq(&[7.0]);
        let p = dwt(&x, 1).unwrap();
        assert_eq!(p.padded_len, 2);
        let s2 = 2.0_f64.sqrt();
        assert!((flat(&p.blocks[1])[0] - 7.0 / s2).abs() < 1e-15);
        assert!((flat(&p.blocks[0])[0] - 7.0 / s2).abs() < 1e-15);
        let y = idwt(&p).unwrap();
        assert!((y.data()[0] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_level_counts() {
        let x = seq(&[1.0, 2.0]);
        assert!(matches!(dwt(&x, 0), Err(WaveletError::InvalidLevels(0))));
        assert!(matches!(dwt(&x, 31), Err(WaveletError::InvalidLevels(31))));
    }

    #[test]
    fn energy_is_preserved() {
        let mut rng = RngState::new(40);
        for &(n, levels) in &[(8usize, 1usize), (12, 2), (33, 3), (64, 3)] {
            let x = sample_gaussian(&mut rng, &[2, 2, n, 3]);
            let p = dwt(&x, levels).unwrap();
            let coeff_energy: f64 = p.blocks.iter().map(|b| b.frobenius_norm().powi(2)).sum();
            let sig_energy = x.frobenius_norm().powi(2);
            assert!(
                (coeff_energy - sig_energy).abs() < 1e-9 * sig_energy.max(1.0),
                "energy drift at n={n} levels={levels}: {coeff_energy} vs {sig_energy}"
            );
        }
    }

    #[test]
    fn unit_gates_reproduce_plain_synthesis() {
        let mut rng = RngState::new(41);
        let x = sample_gaussian(&mut rng, &[2, 1, 10, 2]);
        let p = dwt(&x, 2).unwrap();
        let filters = Tensor::ones(&[2, 3]);
        let weights = Tensor::ones(&[3]);
        let a = filtered_idwt(&p, &filters, &weights).unwrap();
        let b = idwt(&p).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn zero_gates_annihilate() {
        let mut rng = RngState::new(42);
        let x = sample_gaussian(&mut rng, &[1, 2, 8, 2]);
        let p = dwt(&x, 2).unwrap();
        let filters = Tensor::zeros(&[1, 3]);
        let weights = Tensor::ones(&[3]);
        let y = filtered_idwt(&p, &filters, &weights).unwrap();
        assert_eq!(y.frobenius_norm(), 0.0);
    }

    #[test]
    fn detail_suppression_hand_case() {
        // Keeping only the approximation of [1,2,3,4] replaces each pair by
        // its average.
        let p = dwt(&seq(&[1.0, 2.0, 3.0, 4.0]), 1).unwrap();
        let filters = Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
        let weights = Tensor::ones(&[2]);
        let y = filtered_idwt(&p, &filters, &weights).unwrap();
        let want = [1.5, 1.5, 3.5, 3.5];
        for (got, want) in y.data().iter().zip(want) {
            assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
        }
    }

    #[test]
    fn reconstruction_is_linear_in_each_gate() {
        let mut rng = RngState::new(43);
        let x = sample_gaussian(&mut rng, &[1, 1, 16, 2]);
        let p = dwt(&x, 2).unwrap();
        let weights = Tensor::ones(&[3]);
        for i in 0..3 {
            let mut one = vec![0.0; 3];
            one[i] = 1.0;
            let base = filtered_idwt(&p, &Tensor::new(vec![1, 3], one.clone()).unwrap(), &weights).unwrap();
            one[i] = 2.75;
            let scaled =
                filtered_idwt(&p, &Tensor::new(vec![1, 3], one).unwrap(), &weights).unwrap();
            assert!(scaled.max_abs_diff(&base.scale(2.75)) < 1e-12);
        }
    }

    #[test]
    fn gate_factors_commute() {
        // filters * scale_weights gate jointly: scaling the weights must
        // equal scaling the filters.
        let mut rng = RngState::new(44);
        let x = sample_gaussian(&mut rng, &[2, 1, 8, 1]);
        let p = dwt(&x, 1).unwrap();
        let filters = Tensor::new(vec![2, 2], vec![0.3, 0.9, 0.5, 0.1]).unwrap();
        let w = Tensor::new(vec![2], vec![2.0, 0.5]).unwrap();
        let a = filtered_idwt(&p, &filters, &w).unwrap();
        let b = filtered_idwt(&p.clone(), &filters.mul(&w).unwrap(), &Tensor::ones(&[2])).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn filter_shape_is_validated() {
        let p = dwt(&seq(&[1.0, 2.0, 3.0, 4.0]), 1).unwrap();
        let bad = Tensor::ones(&[1, 3]); // needs [1, 2]
        let weights = Tensor::ones(&[2]);
        assert!(matches!(
            filtered_idwt(&p, &bad, &weights),
            Err(WaveletError::FilterShape { .. })
        ));
    }

    #[test]
    fn packed_layout_roundtrips_through_pyramid() {
        let mut rng = RngState::new(45);
        let x = sample_gaussian(&mut rng, &[2, 2, 11, 3]);
        let p = dwt(&x, 2).unwrap();
        let packed = pack_pyramid(&p).unwrap();
        assert_eq!(packed, dwt_packed(&x, 2).unwrap());
        let blocks = split_packed(&packed, 2).unwrap();
        assert_eq!(blocks, p.blocks);
    }

    #[test]
    fn digest_distinguishes_buffers() {
        let a = seq(&[1.0, 2.0, 3.0, 4.0]);
        let b = seq(&[1.0, 2.0, 3.0, 4.0]);
        let c = seq(&[1.0, 2.0, 3.0, 4.0 + 1e-15]);
        assert_eq!(buffer_digest(&[&a]), buffer_digest(&[&b]));
        assert_ne!(buffer_digest(&[&a]), buffer_digest(&[&c]));
        // Shape participates even when the data matches.
        let d = a.reshaped(&[1, 1, 2, 2]).unwrap();
        assert_ne!(buffer_digest(&[&a]), buffer_digest(&[&d]));
    }

    #[test]
    fn cache_counts_hits_and_misses() {
        let mut cache = CoeffCache::new();
        let x = seq(&[1.0, 2.0, 3.0, 4.0]);
        let key = buffer_digest(&[&x]);
        assert!(cache.lookup(key).is_none());
        assert_eq!((cache.hits, cache.misses), (0, 1));
        let packed = dwt_packed(&x, 1).unwrap();
        cache.store(
            key,
            CachedCoeffs {
                q_packed: packed.clone(),
                k_packed: packed.clone(),
                levels: 1,
                q_len: 4,
                k_len: 4,
            },
        );
        let hit = cache.lookup(key).unwrap();
        assert_eq!((cache.hits, cache.misses), (1, 1));
        assert_eq!(hit.q_packed, packed);
    }
}
