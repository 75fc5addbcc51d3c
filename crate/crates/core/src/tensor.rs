//! Dense row-major f64 tensors and the small op set the attention stack
//! needs. Rank stays at or below 4 in practice; extents are always >= 1.
//!
//! Elementwise binary ops broadcast by aligning trailing axes (an axis
//! broadcasts only from extent 1). `matmul_batched` contracts the last two
//! axes and broadcasts leading axes from extent 1 only.
//!
//! Every allocation of a new tensor passes through one chokepoint so tests
//! can assert things like "no [n, n] buffer ever materializes" via
//! [`AllocProbe`].

use std::cell::RefCell;

use thiserror::Error;

use crate::rng::RngState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} wants {expected} elements, got {got}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: zero extent in shape {shape:?}")]
    ZeroExtent { op: &'static str, shape: Vec<usize> },
    #[error("{op}: needs rank >= {min_rank}, got shape {shape:?}")]
    RankTooLow {
        op: &'static str,
        min_rank: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
}

pub type TensorResult<T> = Result<T, TensorError>;

// ---------------------------------------------------------------------------
// Allocation probe

thread_local! {
    static ALLOC_PROBE: RefCell<Option<Vec<Vec<usize>>>> = const { RefCell::new(None) };
}

/// While alive, records the shape of every tensor allocated on this thread.
///
/// Used by tests that assert an execution path never materializes a
/// quadratic-in-n buffer.
pub struct AllocProbe(());

impl AllocProbe {
    pub fn start() -> AllocProbe {
        ALLOC_PROBE.with(|p| *p.borrow_mut() = Some(Vec::new()));
        AllocProbe(())
    }

    /// Stops recording and returns every shape allocated since `start`.
    pub fn finish(self) -> Vec<Vec<usize>> {
        ALLOC_PROBE.with(|p| p.borrow_mut().take()).unwrap_or_default()
    }
}

fn record_alloc(shape: &[usize]) {
    ALLOC_PROBE.with(|p| {
        if let Some(log) = p.borrow_mut().as_mut() {
            log.push(shape.to_vec());
        }
    });
}

// ---------------------------------------------------------------------------
// Core type

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Single chokepoint for fresh buffers; callers guarantee
    /// `data.len() == product(shape)` and no zero extents.
    fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        record_alloc(&shape);
        Tensor { shape, data }
    }

    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> TensorResult<Tensor> {
        if shape.is_empty() || shape.iter().any(|&e| e == 0) {
            return Err(TensorError::ZeroExtent { op: "new", shape });
        }
        let expected = numel(&shape);
        if data.len() != expected {
            return Err(TensorError::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        assert!(
            !shape.is_empty() && shape.iter().all(|&e| e > 0),
            "zeros: bad shape {shape:?}"
        );
        Tensor::from_parts(shape.to_vec(), vec![0.0; numel(shape)])
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        assert!(
            !shape.is_empty() && shape.iter().all(|&e| e > 0),
            "full: bad shape {shape:?}"
        );
        Tensor::from_parts(shape.to_vec(), vec![value; numel(shape)])
    }

    /// Rank-1 tensor of shape [1] holding one value.
    pub fn scalar(value: f64) -> Tensor {
        Tensor::from_parts(vec![1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Element access by multi-index; test convenience, not a hot path.
    pub fn at(&self, idx: &[usize]) -> f64 {
        assert_eq!(idx.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0;
        for (i, (&ix, &ext)) in idx.iter().zip(&self.shape).enumerate() {
            assert!(ix < ext, "index {ix} out of range at axis {i}");
            flat = flat * ext + ix;
        }
        self.data[flat]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|x| x * c)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(|x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Largest absolute elementwise difference; shapes must match exactly.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Same data, new shape; element count must match.
    pub fn reshaped(&self, new_shape: &[usize]) -> TensorResult<Tensor> {
        if new_shape.is_empty() || new_shape.iter().any(|&e| e == 0) {
            return Err(TensorError::ZeroExtent {
                op: "reshape",
                shape: new_shape.to_vec(),
            });
        }
        if numel(new_shape) != self.data.len() {
            return Err(TensorError::DataLength {
                shape: new_shape.to_vec(),
                expected: numel(new_shape),
                got: self.data.len(),
            });
        }
        Ok(Tensor::from_parts(new_shape.to_vec(), self.data.clone()))
    }

    // -- elementwise binary ops with trailing-axis broadcast ----------------

    pub fn add(&self, other: &Tensor) -> TensorResult<Tensor> {
        self.binary(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> TensorResult<Tensor> {
        self.binary(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> TensorResult<Tensor> {
        self.binary(other, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> TensorResult<Tensor> {
        self.binary(other, "div", |a, b| a / b)
    }

    fn binary(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> TensorResult<Tensor> {
        // Fast path: identical shapes.
        if self.shape == other.shape {
            let data = self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Ok(Tensor::from_parts(self.shape.clone(), data));
        }
        // Fast path: rhs is a scalar.
        if other.data.len() == 1 {
            let b = other.data[0];
            return Ok(self.map(|a| f(a, b)));
        }
        // Fast path: rhs matches a trailing suffix of lhs (bias add and co).
        if other.rank() < self.rank() && self.shape.ends_with(&other.shape) {
            let chunk = other.data.len();
            let mut data = Vec::with_capacity(self.data.len());
            for block in self.data.chunks_exact(chunk) {
                data.extend(block.iter().zip(&other.data).map(|(&a, &b)| f(a, b)));
            }
            return Ok(Tensor::from_parts(self.shape.clone(), data));
        }
        // Fast path: rhs equals lhs except the last axis is 1 (row scaling).
        if other.rank() == self.rank()
            && other.shape[..other.rank() - 1] == self.shape[..self.rank() - 1]
            && other.shape[other.rank() - 1] == 1
        {
            let row = self.shape[self.rank() - 1];
            let mut data = Vec::with_capacity(self.data.len());
            for (block, &b) in self.data.chunks_exact(row).zip(&other.data) {
                data.extend(block.iter().map(|&a| f(a, b)));
            }
            return Ok(Tensor::from_parts(self.shape.clone(), data));
        }
        // General strided broadcast.
        let out_shape = broadcast_shape(&self.shape, &other.shape).ok_or(TensorError::ShapeMismatch {
            op,
            lhs: self.shape.clone(),
            rhs: other.shape.clone(),
        })?;
        let a_str = broadcast_strides(&self.shape, &out_shape);
        let b_str = broadcast_strides(&other.shape, &out_shape);
        let out_len = numel(&out_shape);
        let mut data = Vec::with_capacity(out_len);
        let rank = out_shape.len();
        let mut idx = vec![0usize; rank];
        let mut a_off = 0usize;
        let mut b_off = 0usize;
        for _ in 0..out_len {
            data.push(f(self.data[a_off], other.data[b_off]));
            // Odometer increment with incremental offset updates.
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                a_off += a_str[ax];
                b_off += b_str[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                a_off -= a_str[ax] * idx[ax];
                b_off -= b_str[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
        Ok(Tensor::from_parts(out_shape, data))
    }

    /// Sum this tensor down to `target` (summing axes the target holds at
    /// extent 1 and any extra leading axes). Inverse of broadcasting; used
    /// to push gradients back through broadcast ops.
    pub fn sum_to_shape(&self, target: &[usize]) -> TensorResult<Tensor> {
        if self.shape == target {
            return Ok(self.clone());
        }
        if broadcast_shape(target, &self.shape).as_deref() != Some(&self.shape[..]) {
            return Err(TensorError::ShapeMismatch {
                op: "sum_to_shape",
                lhs: self.shape.clone(),
                rhs: target.to_vec(),
            });
        }
        let rank = self.rank();
        let t_str = broadcast_strides(target, &self.shape);
        let mut out = vec![0.0; numel(target)];
        let mut idx = vec![0usize; rank];
        let mut t_off = 0usize;
        for &v in &self.data {
            out[t_off] += v;
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                t_off += t_str[ax];
                if idx[ax] < self.shape[ax] {
                    break;
                }
                t_off -= t_str[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
        Ok(Tensor::from_parts(target.to_vec(), out))
    }

    // -- contractions --------------------------------------------------------

    /// Batched matrix product over the last two axes. Leading axes must
    /// match or broadcast from extent 1 (missing leading axes count as 1).
    pub fn matmul_batched(&self, other: &Tensor) -> TensorResult<Tensor> {
        let (ra, rb) = (self.rank(), other.rank());
        if ra < 2 || rb < 2 {
            let bad = if ra < 2 { &self.shape } else { &other.shape };
            return Err(TensorError::RankTooLow {
                op: "matmul_batched",
                min_rank: 2,
                shape: bad.clone(),
            });
        }
        let (p, q) = (self.shape[ra - 2], self.shape[ra - 1]);
        let (q2, r) = (other.shape[rb - 2], other.shape[rb - 1]);
        if q != q2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_batched",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let lead_a = &self.shape[..ra - 2];
        let lead_b = &other.shape[..rb - 2];
        let lead = match broadcast_shape(lead_a, lead_b) {
            // Only extent-1 stretching is allowed on leading axes; the
            // broadcast helper enforces exactly that.
            Some(l) => l,
            None => {
                return Err(TensorError::ShapeMismatch {
                    op: "matmul_batched",
                    lhs: self.shape.clone(),
                    rhs: other.shape.clone(),
                })
            }
        };
        let a_str = broadcast_strides(lead_a, &lead);
        let b_str = broadcast_strides(lead_b, &lead);
        let batches = numel(&lead);
        let mut out_shape = lead.clone();
        out_shape.push(p);
        out_shape.push(r);
        let mut out = vec![0.0; batches * p * r];

        let a_mat = p * q;
        let b_mat = q2 * r;
        let o_mat = p * r;
        for batch in 0..batches {
            // Decompose the batch index against the lead shape.
            let mut rem = batch;
            let mut a_base = 0usize;
            let mut b_base = 0usize;
            for ax in (0..lead.len()).rev() {
                let coord = rem % lead[ax];
                rem /= lead[ax];
                a_base += coord * a_str[ax] ;
                b_base += coord * b_str[ax];
            }
            // Strides above are in elements of the lead space; convert to
            // matrix-sized steps.
            let a0 = a_base * a_mat;
            let b0 = b_base * b_mat;
            let o0 = batch * o_mat;
            let a_blk = &self.data[a0..a0 + a_mat];
            let b_blk = &other.data[b0..b0 + b_mat];
            let o_blk = &mut out[o0..o0 + o_mat];
            for i in 0..p {
                let arow = &a_blk[i * q..(i + 1) * q];
                let orow = &mut o_blk[i * r..(i + 1) * r];
                for (k, &aik) in arow.iter().enumerate() {
                    let brow = &b_blk[k * r..(k + 1) * r];
                    for (o, &b) in orow.iter_mut().zip(brow) {
                        *o += aik * b;
                    }
                }
            }
        }
        Ok(Tensor::from_parts(out_shape, out))
    }

    // -- axis manipulation ---------------------------------------------------

    pub fn transpose_last_two(&self) -> TensorResult<Tensor> {
        let rank = self.rank();
        if rank < 2 {
            return Err(TensorError::RankTooLow {
                op: "transpose_last_two",
                min_rank: 2,
                shape: self.shape.clone(),
            });
        }
        let (p, q) = (self.shape[rank - 2], self.shape[rank - 1]);
        let mut shape = self.shape.clone();
        shape[rank - 2] = q;
        shape[rank - 1] = p;
        let mat = p * q;
        let mut data = vec![0.0; self.data.len()];
        for (blk_in, blk_out) in self.data.chunks_exact(mat).zip(data.chunks_exact_mut(mat)) {
            for i in 0..p {
                for j in 0..q {
                    blk_out[j * p + i] = blk_in[i * q + j];
                }
            }
        }
        Ok(Tensor::from_parts(shape, data))
    }

    /// Swap axes 1 and 2 of a rank-4 tensor: [a, b, c, d] -> [a, c, b, d].
    pub fn swap_axes_1_2(&self) -> TensorResult<Tensor> {
        if self.rank() != 4 {
            return Err(TensorError::RankTooLow {
                op: "swap_axes_1_2",
                min_rank: 4,
                shape: self.shape.clone(),
            });
        }
        let (a, b, c, d) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        let mut data = vec![0.0; self.data.len()];
        for ia in 0..a {
            for ib in 0..b {
                for ic in 0..c {
                    let src = (((ia * b + ib) * c) + ic) * d;
                    let dst = (((ia * c + ic) * b) + ib) * d;
                    data[dst..dst + d].copy_from_slice(&self.data[src..src + d]);
                }
            }
        }
        Ok(Tensor::from_parts(vec![a, c, b, d], data))
    }

    /// Arithmetic mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&self, axis: usize) -> TensorResult<Tensor> {
        let summed = self.sum_axis(axis)?;
        Ok(summed.scale(1.0 / self.shape[axis] as f64))
    }

    /// Sum over one axis; the axis is removed from the shape.
    pub fn sum_axis(&self, axis: usize) -> TensorResult<Tensor> {
        if axis >= self.rank() {
            return Err(TensorError::AxisOutOfRange {
                op: "sum_axis",
                axis,
                shape: self.shape.clone(),
            });
        }
        if self.rank() == 1 {
            return Ok(Tensor::scalar(self.sum()));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let ext = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut shape = self.shape.clone();
        shape.remove(axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for e in 0..ext {
                let src = (o * ext + e) * inner;
                let dst = o * inner;
                for i in 0..inner {
                    data[dst + i] += self.data[src + i];
                }
            }
        }
        Ok(Tensor::from_parts(shape, data))
    }

    /// Concatenate along the last axis; all other axes must agree.
    pub fn concat_last_dim(parts: &[&Tensor]) -> TensorResult<Tensor> {
        assert!(!parts.is_empty(), "concat_last_dim needs at least one part");
        let first = parts[0];
        let rank = first.rank();
        let lead = &first.shape[..rank - 1];
        let mut last = 0usize;
        for part in parts {
            if part.rank() != rank || &part.shape[..rank - 1] != lead {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_last_dim",
                    lhs: first.shape.clone(),
                    rhs: part.shape.clone(),
                });
            }
            last += part.shape[rank - 1];
        }
        let rows: usize = lead.iter().product();
        let mut shape = lead.to_vec();
        shape.push(last);
        let mut data = Vec::with_capacity(rows * last);
        for row in 0..rows {
            for part in parts {
                let w = part.shape[rank - 1];
                data.extend_from_slice(&part.data[row * w..(row + 1) * w]);
            }
        }
        Ok(Tensor::from_parts(shape, data))
    }

    // -- row-wise nonlinear ops ----------------------------------------------

    /// Numerically stable softmax over the last axis.
    pub fn softmax_lastdim(&self) -> Tensor {
        let row = self.shape[self.rank() - 1];
        let mut data = Vec::with_capacity(self.data.len());
        for block in self.data.chunks_exact(row) {
            let max = block.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let mut sum = 0.0;
            let start = data.len();
            for &x in block {
                let e = (x - max).exp();
                sum += e;
                data.push(e);
            }
            for v in &mut data[start..] {
                *v /= sum;
            }
        }
        Tensor::from_parts(self.shape.clone(), data)
    }

    /// Layer normalization over the last axis with affine parameters of
    /// shape [last]. Variance is the biased estimate.
    pub fn layer_norm_lastdim(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> TensorResult<Tensor> {
        let row = self.shape[self.rank() - 1];
        if gamma.shape != [row] || beta.shape != [row] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm_lastdim",
                lhs: self.shape.clone(),
                rhs: gamma.shape.clone(),
            });
        }
        let mut data = Vec::with_capacity(self.data.len());
        for block in self.data.chunks_exact(row) {
            let mean = block.iter().sum::<f64>() / row as f64;
            let var = block.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / row as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (i, &x) in block.iter().enumerate() {
                data.push((x - mean) * inv * gamma.data[i] + beta.data[i]);
            }
        }
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }
}

// ---------------------------------------------------------------------------
// Broadcast helpers

/// Shape both inputs stretch to, aligning trailing axes; None when some axis
/// pair disagrees with neither side at extent 1.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let ad = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let bd = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = if ad == bd {
            ad
        } else if ad == 1 {
            bd
        } else if bd == 1 {
            ad
        } else {
            return None;
        };
    }
    Some(out)
}

/// Per-axis element strides of `shape` viewed inside `out_shape`, with 0 on
/// broadcast axes. `shape` is right-aligned against `out_shape`.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        if shape[i] != 1 {
            strides[offset + i] = acc;
        }
        acc *= shape[i];
    }
    strides
}

// ---------------------------------------------------------------------------
// Random sampling

/// I.i.d. standard normal entries drawn from `rng` in row-major order.
pub fn sample_gaussian(rng: &mut RngState, shape: &[usize]) -> Tensor {
    assert!(
        !shape.is_empty() && shape.iter().all(|&e| e > 0),
        "sample_gaussian: bad shape {shape:?}"
    );
    let n = numel(shape);
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(rng.next_gaussian());
    }
    Tensor::new(shape.to_vec(), data).expect("shape validated above")
}

/// Random matrix with orthonormal columns when rows >= cols, orthonormal
/// rows otherwise. Gaussian init followed by modified Gram-Schmidt with a
/// re-orthogonalization pass; degenerate draws are resampled.
pub fn sample_orthogonal(rng: &mut RngState, rows: usize, cols: usize) -> Tensor {
    assert!(rows > 0 && cols > 0, "sample_orthogonal: zero dimension");
    if rows < cols {
        let t = sample_orthogonal(rng, cols, rows);
        return t.transpose_last_two().expect("rank 2");
    }
    'resample: for _attempt in 0..64 {
        let g = sample_gaussian(rng, &[rows, cols]);
        let mut q = g.data().to_vec();
        for j in 0..cols {
            // Two MGS passes keep orthogonality near machine precision.
            for _ in 0..2 {
                for k in 0..j {
                    let mut dot = 0.0;
                    for i in 0..rows {
                        dot += q[i * cols + k] * q[i * cols + j];
                    }
                    for i in 0..rows {
                        q[i * cols + j] -= dot * q[i * cols + k];
                    }
                }
            }
            let norm = (0..rows).map(|i| q[i * cols + j] * q[i * cols + j]).sum::<f64>().sqrt();
            if norm < 1e-10 {
                continue 'resample;
            }
            for i in 0..rows {
                q[i * cols + j] /= norm;
            }
        }
        return Tensor::new(vec![rows, cols], q).expect("shape fixed");
    }
    unreachable!("64 consecutive rank-deficient Gaussian draws")
}
