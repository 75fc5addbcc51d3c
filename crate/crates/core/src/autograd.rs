//! Reverse-mode differentiation over a tape of whole-tensor operations.
//!
//! Every forward method records one node holding the op, its input node
//! ids, and the eagerly computed output value. Node ids grow monotonically
//! and ops only reference earlier nodes, so the tape order is already a
//! topological order: `backward` walks it once in reverse, accumulating
//! adjoints. A [`Var`] is only meaningful on the tape that issued it.
//!
//! The op set is closed and every op has an adjoint. Conventions baked in
//! here and relied on by the gradient checks:
//! - relu and max-with-constant take derivative 0 at their kink;
//! - broadcasting ops reduce gradients back with `sum_to_shape`;
//! - the Haar ops are orthonormal, so each one's backward is its partner
//!   kernel (analysis <-> synthesis) rather than new code.

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};
use crate::wavelet::{self, WaveletError};

#[derive(Debug, Error)]
pub enum AutogradError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error("node {0} is not recorded on this tape")]
    UnrecordedNode(usize),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

pub type AutogradResult<T> = Result<T, AutogradError>;

/// Handle to a node on one specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn id(&self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MaxConst(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Matmul(Var, Var),
    TransposeLastTwo(Var),
    SwapAxes12(Var),
    Reshape(Var),
    MeanAxis(Var, usize),
    SumAxis(Var, usize),
    SumAll(Var),
    SoftmaxLastDim(Var),
    /// softmax(q k^T * scale) over the last axis, computed row-streamed so
    /// only the result matrix is ever materialized.
    ScaledSoftmax(Var, Var, f64),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    },
    Dwt {
        x: Var,
        levels: usize,
    },
    Idwt {
        packed: Var,
        levels: usize,
    },
    BlockScale {
        packed: Var,
        gate: Var,
        levels: usize,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> AutogradResult<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> AutogradResult<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> AutogradResult<Var> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn div(&mut self, a: Var, b: Var) -> AutogradResult<Var> {
        let v = self.value(a).div(self.value(b))?;
        Ok(self.push(Op::Div(a, b), v))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddConst(a), v)
    }

    /// Elementwise max(x, c); derivative 0 where x <= c.
    pub fn max_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x.max(c));
        self.push(Op::MaxConst(a, c), v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).relu();
        self.push(Op::Relu(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).sigmoid();
        self.push(Op::Sigmoid(a), v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> AutogradResult<Var> {
        let v = self.value(a).matmul_batched(self.value(b))?;
        Ok(self.push(Op::Matmul(a, b), v))
    }

    pub fn transpose_last_two(&mut self, a: Var) -> AutogradResult<Var> {
        let v = self.value(a).transpose_last_two()?;
        Ok(self.push(Op::TransposeLastTwo(a), v))
    }

    pub fn swap_axes_1_2(&mut self, a: Var) -> AutogradResult<Var> {
        let v = self.value(a).swap_axes_1_2()?;
        Ok(self.push(Op::SwapAxes12(a), v))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> AutogradResult<Var> {
        let v = self.value(a).reshaped(shape)?;
        Ok(self.push(Op::Reshape(a), v))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> AutogradResult<Var> {
        let v = self.value(a).mean_axis(axis)?;
        Ok(self.push(Op::MeanAxis(a, axis), v))
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> AutogradResult<Var> {
        let v = self.value(a).sum_axis(axis)?;
        Ok(self.push(Op::SumAxis(a, axis), v))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(Op::SumAll(a), v)
    }

    pub fn softmax_lastdim(&mut self, a: Var) -> Var {
        let v = self.value(a).softmax_lastdim();
        self.push(Op::SoftmaxLastDim(a), v)
    }

    /// softmax(q k^T * scale) without materializing the pre-softmax scores:
    /// each output row is built from a streamed dot-product row. Output
    /// shape: lead ++ [n_q, n_k].
    pub fn scaled_softmax(&mut self, q: Var, k: Var, scale: f64) -> AutogradResult<Var> {
        let v = scaled_softmax_value(self.value(q), self.value(k), scale)?;
        Ok(self.push(Op::ScaledSoftmax(q, k, scale), v))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> AutogradResult<Var> {
        let v = self
            .value(x)
            .layer_norm_lastdim(self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(Op::LayerNorm { x, gamma, beta, eps }, v))
    }

    /// Haar analysis to the packed coefficient layout.
    pub fn dwt(&mut self, x: Var, levels: usize) -> AutogradResult<Var> {
        let v = wavelet::dwt_packed(self.value(x), levels)?;
        Ok(self.push(Op::Dwt { x, levels }, v))
    }

    /// Haar synthesis from the packed layout, trimmed to `orig_len`.
    pub fn idwt(&mut self, packed: Var, levels: usize, orig_len: usize) -> AutogradResult<Var> {
        let v = wavelet::idwt_packed(self.value(packed), levels, orig_len)?;
        Ok(self.push(Op::Idwt { packed, levels }, v))
    }

    /// Gate packed coefficient blocks with a [batch, levels + 1] tensor.
    pub fn block_scale(&mut self, packed: Var, gate: Var, levels: usize) -> AutogradResult<Var> {
        let v = wavelet::scale_packed_blocks(self.value(packed), levels, self.value(gate))?;
        Ok(self.push(Op::BlockScale { packed, gate, levels }, v))
    }

    /// Row lookup: out[i, :] = table[ids[i], :], reshaped to
    /// out_lead ++ [row_width]. `ids.len()` must equal product(out_lead).
    pub fn gather(&mut self, table: Var, ids: &[usize], out_lead: &[usize]) -> AutogradResult<Var> {
        let t = self.value(table);
        let (rows, width) = match t.shape() {
            [r, w] => (*r, *w),
            other => {
                return Err(TensorError::RankTooLow {
                    op: "gather",
                    min_rank: 2,
                    shape: other.to_vec(),
                }
                .into())
            }
        };
        assert_eq!(
            ids.len(),
            out_lead.iter().product::<usize>(),
            "gather: ids length does not match output lead shape"
        );
        let mut data = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            assert!(id < rows, "gather: row {id} out of range ({rows} rows)");
            data.extend_from_slice(&t.data()[id * width..(id + 1) * width]);
        }
        let mut shape = out_lead.to_vec();
        shape.push(width);
        let v = Tensor::new(shape, data)?;
        Ok(self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            v,
        ))
    }

    /// Mean cross-entropy of logits [batch, classes] against integer labels,
    /// computed with the usual max-shifted log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> AutogradResult<Var> {
        let l = self.value(logits);
        let (b, c) = match l.shape() {
            [b, c] => (*b, *c),
            other => {
                return Err(TensorError::RankTooLow {
                    op: "cross_entropy",
                    min_rank: 2,
                    shape: other.to_vec(),
                }
                .into())
            }
        };
        assert_eq!(labels.len(), b, "cross_entropy: one label per batch row");
        let mut total = 0.0;
        for (row, &label) in l.data().chunks_exact(c).zip(labels) {
            assert!(label < c, "cross_entropy: label {label} out of range");
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[label];
        }
        let v = Tensor::scalar(total / b as f64);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            v,
        ))
    }

    /// Reverse pass from a scalar loss. Visits each node exactly once in
    /// reverse insertion order and returns one gradient slot per node.
    pub fn backward(&self, loss: Var) -> AutogradResult<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(AutogradError::UnrecordedNode(loss.0));
        }
        let loss_val = &self.nodes[loss.0].value;
        if loss_val.len() != 1 {
            return Err(AutogradError::NonScalarLoss(loss_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(loss_val.shape()));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, g.sum_to_shape(self.shape_of(*a))?)?;
                    self.acc(&mut grads, *b, g.sum_to_shape(self.shape_of(*b))?)?;
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *a, g.sum_to_shape(self.shape_of(*a))?)?;
                    self.acc(&mut grads, *b, g.scale(-1.0).sum_to_shape(self.shape_of(*b))?)?;
                }
                Op::Mul(a, b) => {
                    let da = g.mul(self.value(*b))?.sum_to_shape(self.shape_of(*a))?;
                    let db = g.mul(self.value(*a))?.sum_to_shape(self.shape_of(*b))?;
                    self.acc(&mut grads, *a, da)?;
                    self.acc(&mut grads, *b, db)?;
                }
                Op::Div(a, b) => {
                    let vb = self.value(*b);
                    let da = g.div(vb)?.sum_to_shape(self.shape_of(*a))?;
                    let db = g
                        .mul(self.value(*a))?
                        .div(vb)?
                        .div(vb)?
                        .scale(-1.0)
                        .sum_to_shape(self.shape_of(*b))?;
                    self.acc(&mut grads, *a, da)?;
                    self.acc(&mut grads, *b, db)?;
                }
                Op::Scale(a, c) => self.acc(&mut grads, *a, g.scale(*c))?,
                Op::AddConst(a) => self.acc(&mut grads, *a, g.clone())?,
                Op::MaxConst(a, c) => {
                    let c = *c;
                    let mask = self.value(*a).map(|x| if x > c { 1.0 } else { 0.0 });
                    self.acc(&mut grads, *a, g.mul(&mask)?)?;
                }
                Op::Relu(a) => {
                    let mask = self.value(*a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    self.acc(&mut grads, *a, g.mul(&mask)?)?;
                }
                Op::Sigmoid(a) => {
                    let dv = node.value.map(|y| y * (1.0 - y));
                    self.acc(&mut grads, *a, g.mul(&dv)?)?;
                }
                Op::Matmul(a, b) => {
                    let bt = self.value(*b).transpose_last_two()?;
                    let da = g.matmul_batched(&bt)?.sum_to_shape(self.shape_of(*a))?;
                    let at = self.value(*a).transpose_last_two()?;
                    let db = at.matmul_batched(&g)?.sum_to_shape(self.shape_of(*b))?;
                    self.acc(&mut grads, *a, da)?;
                    self.acc(&mut grads, *b, db)?;
                }
                Op::TransposeLastTwo(a) => self.acc(&mut grads, *a, g.transpose_last_two()?)?,
                Op::SwapAxes12(a) => self.acc(&mut grads, *a, g.swap_axes_1_2()?)?,
                Op::Reshape(a) => self.acc(&mut grads, *a, g.reshaped(self.shape_of(*a))?)?,
                Op::MeanAxis(a, axis) => {
                    let extent = self.shape_of(*a)[*axis];
                    let expanded = expand_axis(&g, *axis, extent).scale(1.0 / extent as f64);
                    self.acc(&mut grads, *a, expanded)?;
                }
                Op::SumAxis(a, axis) => {
                    let extent = self.shape_of(*a)[*axis];
                    self.acc(&mut grads, *a, expand_axis(&g, *axis, extent))?;
                }
                Op::SumAll(a) => {
                    let da = Tensor::full(self.shape_of(*a), g.data()[0]);
                    self.acc(&mut grads, *a, da)?;
                }
                Op::SoftmaxLastDim(a) => {
                    self.acc(&mut grads, *a, softmax_backward(&node.value, &g))?;
                }
                Op::ScaledSoftmax(q, k, scale) => {
                    let ds = softmax_backward(&node.value, &g);
                    let dq = ds
                        .matmul_batched(self.value(*k))?
                        .scale(*scale)
                        .sum_to_shape(self.shape_of(*q))?;
                    let dk = ds
                        .transpose_last_two()?
                        .matmul_batched(self.value(*q))?
                        .scale(*scale)
                        .sum_to_shape(self.shape_of(*k))?;
                    self.acc(&mut grads, *q, dq)?;
                    self.acc(&mut grads, *k, dk)?;
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    let (dx, dgamma, dbeta) =
                        layer_norm_backward(self.value(*x), self.value(*gamma), &g, *eps)?;
                    self.acc(&mut grads, *x, dx)?;
                    self.acc(&mut grads, *gamma, dgamma)?;
                    self.acc(&mut grads, *beta, dbeta)?;
                }
                Op::Dwt { x, levels } => {
                    // Orthonormal analysis (with zero pad): adjoint is
                    // synthesis trimmed to the input length.
                    let orig = self.shape_of(*x)[2];
                    self.acc(&mut grads, *x, wavelet::idwt_packed(&g, *levels, orig)?)?;
                }
                Op::Idwt { packed, levels } => {
                    // Adjoint of trim-after-synthesis: zero pad, analyze.
                    self.acc(&mut grads, *packed, wavelet::dwt_packed(&g, *levels)?)?;
                }
                Op::BlockScale { packed, gate, levels } => {
                    let dp = wavelet::scale_packed_blocks(&g, *levels, self.value(*gate))?;
                    let dg = wavelet::scale_packed_gate_grad(self.value(*packed), *levels, &g)?;
                    self.acc(&mut grads, *packed, dp)?;
                    self.acc(&mut grads, *gate, dg)?;
                }
                Op::Gather { table, ids } => {
                    let shape = self.shape_of(*table);
                    let width = shape[1];
                    let mut dt = vec![0.0; shape[0] * width];
                    for (i, &id) in ids.iter().enumerate() {
                        let src = &g.data()[i * width..(i + 1) * width];
                        for (slot, &v) in dt[id * width..(id + 1) * width].iter_mut().zip(src) {
                            *slot += v;
                        }
                    }
                    self.acc(&mut grads, *table, Tensor::new(shape.to_vec(), dt)?)?;
                }
                Op::CrossEntropy { logits, labels } => {
                    let l = self.value(*logits);
                    let c = l.shape()[1];
                    let scale = g.data()[0] / labels.len() as f64;
                    let mut dl = l.softmax_lastdim().data().to_vec();
                    for (i, &label) in labels.iter().enumerate() {
                        dl[i * c + label] -= 1.0;
                    }
                    for v in &mut dl {
                        *v *= scale;
                    }
                    self.acc(&mut grads, *logits, Tensor::new(l.shape().to_vec(), dl)?)?;
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn shape_of(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) -> AutogradResult<()> {
        match &mut grads[v.0] {
            Some(t) => *t = t.add(&delta)?,
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }
}

/// Per-node adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; None when the loss does
    /// not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

// ---------------------------------------------------------------------------
// Shared kernels

fn scaled_softmax_value(q: &Tensor, k: &Tensor, scale: f64) -> AutogradResult<Tensor> {
    let (rq, rk) = (q.rank(), k.rank());
    if rq < 2 || rk < 2 {
        return Err(TensorError::RankTooLow {
            op: "scaled_softmax",
            min_rank: 2,
            shape: if rq < 2 { q.shape().to_vec() } else { k.shape().to_vec() },
        }
        .into());
    }
    let (n, d) = (q.shape()[rq - 2], q.shape()[rq - 1]);
    let (n2, d2) = (k.shape()[rk - 2], k.shape()[rk - 1]);
    if d != d2 {
        return Err(TensorError::ShapeMismatch {
            op: "scaled_softmax",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        }
        .into());
    }
    // Leading axes must match exactly or broadcast from extent 1, and the
    // whole leading block of each operand is either shared or repeated, so
    // batch indexing below can treat each side as one flat batch axis.
    let lead_q = &q.shape()[..rq - 2];
    let lead_k = &k.shape()[..rk - 2];
    let rank = lead_q.len().max(lead_k.len());
    let mut lead = vec![0usize; rank];
    for i in 0..rank {
        let a = if i + lead_q.len() >= rank { lead_q[i + lead_q.len() - rank] } else { 1 };
        let b = if i + lead_k.len() >= rank { lead_k[i + lead_k.len() - rank] } else { 1 };
        lead[i] = match (a, b) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "scaled_softmax",
                    lhs: q.shape().to_vec(),
                    rhs: k.shape().to_vec(),
                }
                .into())
            }
        };
    }
    let batches: usize = lead.iter().product::<usize>().max(1);
    let qb: usize = lead_q.iter().product::<usize>().max(1);
    let kb: usize = lead_k.iter().product::<usize>().max(1);
    // Per-axis broadcasting beyond "one side is a single batch" would need
    // strided indexing; nothing here uses it.
    if (qb != 1 && qb != batches) || (kb != 1 && kb != batches) {
        return Err(TensorError::ShapeMismatch {
            op: "scaled_softmax",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        }
        .into());
    }
    let mut out = vec![0.0; batches * n * n2];
    let mut row = vec![0.0; n2];
    for t in 0..batches {
        let qblk = &q.data()[(if qb == 1 { 0 } else { t }) * n * d..][..n * d];
        let kblk = &k.data()[(if kb == 1 { 0 } else { t }) * n2 * d..][..n2 * d];
        for i in 0..n {
            let qi = &qblk[i * d..(i + 1) * d];
            let mut max = f64::NEG_INFINITY;
            for (j, slot) in row.iter_mut().enumerate() {
                let kj = &kblk[j * d..(j + 1) * d];
                let dot: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                let s = dot * scale;
                *slot = s;
                max = max.max(s);
            }
            let mut sum = 0.0;
            for slot in row.iter_mut() {
                *slot = (*slot - max).exp();
                sum += *slot;
            }
            let obase = (t * n + i) * n2;
            for (j, &e) in row.iter().enumerate() {
                out[obase + j] = e / sum;
            }
        }
    }
    let mut shape = lead;
    shape.push(n);
    shape.push(n2);
    Ok(Tensor::new(shape, out)?)
}

/// dX for y = softmax(x) over the last axis: y * (g - sum(g * y)).
fn softmax_backward(y: &Tensor, g: &Tensor) -> Tensor {
    let row = y.shape()[y.rank() - 1];
    let mut data = Vec::with_capacity(y.len());
    for (yr, gr) in y.data().chunks_exact(row).zip(g.data().chunks_exact(row)) {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        data.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
    }
    Tensor::new(y.shape().to_vec(), data).expect("shape preserved")
}

fn layer_norm_backward(
    x: &Tensor,
    gamma: &Tensor,
    g: &Tensor,
    eps: f64,
) -> AutogradResult<(Tensor, Tensor, Tensor)> {
    let f = x.shape()[x.rank() - 1];
    let mut dx = Vec::with_capacity(x.len());
    let mut dgamma = vec![0.0; f];
    let mut dbeta = vec![0.0; f];
    for (xr, gr) in x.data().chunks_exact(f).zip(g.data().chunks_exact(f)) {
        let mean = xr.iter().sum::<f64>() / f as f64;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / f as f64;
        let inv = 1.0 / (var + eps).sqrt();
        // xhat and the two row means the gradient needs.
        let mut m1 = 0.0; // mean of dyhat
        let mut m2 = 0.0; // mean of dyhat * xhat
        for i in 0..f {
            let xhat = (xr[i] - mean) * inv;
            let dyhat = gr[i] * gamma.data()[i];
            m1 += dyhat;
            m2 += dyhat * xhat;
            dgamma[i] += gr[i] * xhat;
            dbeta[i] += gr[i];
        }
        m1 /= f as f64;
        m2 /= f as f64;
        for i in 0..f {
            let xhat = (xr[i] - mean) * inv;
            let dyhat = gr[i] * gamma.data()[i];
            dx.push((dyhat - m1 - xhat * m2) * inv);
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(vec![f], dgamma)?,
        Tensor::new(vec![f], dbeta)?,
    ))
}

/// Repeat `t` `extent` times along a new axis inserted at `axis`.
fn expand_axis(t: &Tensor, axis: usize, extent: usize) -> Tensor {
    let outer: usize = t.shape()[..axis].iter().product();
    let inner: usize = t.shape()[axis..].iter().product();
    let mut data = Vec::with_capacity(t.len() * extent);
    for o in 0..outer {
        let row = &t.data()[o * inner..(o + 1) * inner];
        for _ in 0..extent {
            data.extend_from_slice(row);
        }
    }
    let mut shape = t.shape().to_vec();
    shape.insert(axis, extent);
    Tensor::new(shape, data).expect("shape consistent")
}

/// One row of a gradient-check report.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub param: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub h: f64,
}

/// Relative error with the conventional floor:
/// |a - n| / max(|a|, |n|, 1e-12).
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Central-difference step for whole-layer checks.
pub const GRAD_CHECK_H: f64 = 1e-5;

fn wersa_half_sse(
    cfg: &crate::attention::WersaConfig,
    params: &crate::attention::WersaParams,
    x: &Tensor,
    y: &Tensor,
) -> Result<f64, crate::attention::AttentionError> {
    let mut tape = Tape::new();
    let bound = crate::attention::bind_params(&mut tape, params);
    let (q, k, v) = (
        tape.leaf(x.clone()),
        tape.leaf(x.clone()),
        tape.leaf(x.clone()),
    );
    let outs = crate::attention::wersa_graph(&mut tape, cfg, &bound, q, k, v, None, true, None)?;
    let target = tape.leaf(y.clone());
    let diff = tape.sub(outs.out, target)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum_all(sq);
    let loss = tape.scale(total, 0.5);
    Ok(tape.value(loss).data()[0])
}

/// Audits every live parameter group of one attention layer against
/// central differences.
///
/// Runs the layer on seeded self-attention inputs with loss
/// 0.5 * ||out - target||^2, takes analytic gradients from one backward
/// pass, then rebuilds the loss twice per parameter element at +/- h.
/// Groups frozen by the active ablation are skipped (they receive no
/// updates) and the random projections never appear at all. Meant for
/// small configs: cost grows with parameter count times forward cost.
pub fn grad_check(
    cfg: &crate::attention::WersaConfig,
    params: &crate::attention::WersaParams,
    seed: u64,
) -> Result<Vec<GradReport>, crate::attention::AttentionError> {
    let (b, n) = (2, 8);
    let mut rng = crate::rng::RngState::new(seed);
    let x = crate::tensor::sample_gaussian(&mut rng, &[b, n, cfg.d_model]);
    let y = crate::tensor::sample_gaussian(&mut rng, &[b, n, cfg.d_model]);

    let mut tape = Tape::new();
    let bound = crate::attention::bind_params(&mut tape, params);
    let (q, k, v) = (
        tape.leaf(x.clone()),
        tape.leaf(x.clone()),
        tape.leaf(x.clone()),
    );
    let outs = crate::attention::wersa_graph(&mut tape, cfg, &bound, q, k, v, None, true, None)?;
    let target = tape.leaf(y.clone());
    let diff = tape.sub(outs.out, target)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum_all(sq);
    let loss = tape.scale(total, 0.5);
    let grads = tape.backward(loss)?;

    let mut reports = Vec::new();
    for (name, var, frozen) in bound.entries(cfg) {
        if frozen {
            continue;
        }
        let shape = params.tensor(name).expect("bound name exists").shape().to_vec();
        let analytic = grads
            .wrt(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&shape));
        let mut max_rel_err = 0.0f64;
        let mut max_abs_err = 0.0f64;
        for e in 0..analytic.len() {
            let mut plus = params.clone();
            plus.tensor_mut(name).expect("name exists").data_mut()[e] += GRAD_CHECK_H;
            let mut minus = params.clone();
            minus.tensor_mut(name).expect("name exists").data_mut()[e] -= GRAD_CHECK_H;
            let numeric = (wersa_half_sse(cfg, &plus, &x, &y)?
                - wersa_half_sse(cfg, &minus, &x, &y)?)
                / (2.0 * GRAD_CHECK_H);
            let a = analytic.data()[e];
            max_abs_err = max_abs_err.max((a - numeric).abs());
            max_rel_err = max_rel_err.max(rel_err(a, numeric));
        }
        reports.push(GradReport {
            param: name.to_string(),
            max_rel_err,
            max_abs_err,
            h: GRAD_CHECK_H,
        });
    }
    Ok(reports)
}
