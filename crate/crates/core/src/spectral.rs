//! ReLU random-feature map and the normalized linear-attention contraction.
//!
//! The map is phi(x) = ReLU(x R / bw) / sqrt(m) with a frozen projection R
//! and a learnable bandwidth clamped to bw = max(beta, 1e-4). Attention then
//! factorizes as phi(Q) (phi(K)^T V): the contraction goes through an m-by-d
//! intermediate, so cost and memory stay linear in sequence length. Nothing
//! in this module ever builds an n-by-n array; a test pins that with the
//! allocation probe at n = 8192.

use serde::{Deserialize, Serialize};

use crate::rng::RngState;
use crate::tensor::{sample_gaussian, sample_orthogonal, Tensor, TensorError, TensorResult};

/// Lower clamp for the bandwidth divisor.
pub const BW_FLOOR: f64 = 1e-4;
/// Stabilizer added to the attention denominator.
pub const DENOM_EPS: f64 = 1e-6;
/// Variance floor inside the layer-norm stabilizer.
pub const LN_EPS: f64 = 1e-5;
/// Default feature count.
pub const DEFAULT_FEATURES: usize = 1024;
/// Default initial bandwidth.
pub const DEFAULT_BETA: f64 = 1.0;

/// How the frozen projections are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RInit {
    Gaussian,
    /// Orthonormal d_h-direction rows, rescaled by sqrt(m) so column norms
    /// match the Gaussian draw in expectation.
    Orthogonal,
}

/// How the linear-attention output is stabilized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Divide each row by phi(Q) (phi(K)^T 1) + eps.
    Denominator,
    /// Layer-normalize each row over the value dimension.
    Layernorm,
}

/// Selects which frozen projection `phi` applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WhichR {
    Q,
    K,
}

/// Frozen feature projections plus the learnable bandwidth.
///
/// `r_q`/`r_k` are [groups, d_h, m] with groups = heads, or 1 when a single
/// projection pair is shared across heads. They are sampled once and never
/// touched by the optimizer; only `beta` trains.
#[derive(Debug, Clone)]
pub struct RandomFeatureMap {
    pub r_q: Tensor,
    pub r_k: Tensor,
    pub beta: Tensor,
    pub m: usize,
    pub init_kind: RInit,
}

impl RandomFeatureMap {
    /// Draws the projection pair. Sampling order is fixed (all of r_q, then
    /// all of r_k, head by head) so a seed pins the parameters bit-for-bit.
    pub fn sample(
        rng: &mut RngState,
        heads: usize,
        d_h: usize,
        m: usize,
        beta_init: f64,
        init_kind: RInit,
        share_across_heads: bool,
    ) -> RandomFeatureMap {
        let groups = if share_across_heads { 1 } else { heads };
        let r_q = sample_projection(rng, groups, d_h, m, init_kind);
        let r_k = sample_projection(rng, groups, d_h, m, init_kind);
        RandomFeatureMap {
            r_q,
            r_k,
            beta: Tensor::scalar(beta_init),
            m,
            init_kind,
        }
    }

    pub fn bandwidth(&self) -> f64 {
        self.beta.data()[0].max(BW_FLOOR)
    }
}

fn sample_projection(
    rng: &mut RngState,
    groups: usize,
    d_h: usize,
    m: usize,
    init_kind: RInit,
) -> Tensor {
    let mut data = Vec::with_capacity(groups * d_h * m);
    for _ in 0..groups {
        let block = match init_kind {
            RInit::Gaussian => sample_gaussian(rng, &[d_h, m]),
            RInit::Orthogonal => sample_orthogonal(rng, d_h, m).scale((m as f64).sqrt()),
        };
        data.extend_from_slice(block.data());
    }
    Tensor::new(vec![groups, d_h, m], data).expect("shape consistent")
}

/// Feature map: ReLU(x R / bw) / sqrt(m).
///
/// `x` is [b, h, n, d_h]; the projection broadcasts over batch (and over
/// heads when shared), giving [b, h, n, m]. Output is nonnegative and
/// positively homogeneous: scaling x and beta by the same c > 0 leaves it
/// unchanged.
pub fn phi(x: &Tensor, map: &RandomFeatureMap, which: WhichR) -> TensorResult<Tensor> {
    let r = match which {
        WhichR::Q => &map.r_q,
        WhichR::K => &map.r_k,
    };
    let bw = map.bandwidth();
    let scaled = x.matmul_batched(r)?.scale(1.0 / bw);
    Ok(scaled.relu().scale(1.0 / (map.m as f64).sqrt()))
}

/// phi(Q) (phi(K)^T V), stabilized.
///
/// Contracts phi_k against v first (an m-by-d_h block per batch/head), then
/// applies phi_q, so no n-by-n array exists at any point. Denominator mode
/// divides each row by phi(Q) (phi(K)^T 1) + eps; layernorm mode normalizes
/// each output row over d_h, with optional affine (gain, bias) vectors.
pub fn linear_attention(
    phi_q: &Tensor,
    phi_k: &Tensor,
    v: &Tensor,
    mode: NormMode,
    eps: f64,
    ln_affine: Option<(&Tensor, &Tensor)>,
) -> TensorResult<Tensor> {
    let kv = phi_k.transpose_last_two()?.matmul_batched(v)?;
    let num = phi_q.matmul_batched(&kv)?;
    match mode {
        NormMode::Denominator => {
            let rank = phi_k.rank();
            if rank < 3 {
                return Err(TensorError::RankTooLow {
                    op: "linear_attention",
                    min_rank: 3,
                    shape: phi_k.shape().to_vec(),
                });
            }
            // phi(K)^T 1 = column sums of phi_k, shaped as an m-vector.
            let ksum = phi_k.sum_axis(rank - 2)?;
            let mut col_shape = ksum.shape().to_vec();
            col_shape.push(1);
            let den = phi_q.matmul_batched(&ksum.reshaped(&col_shape)?)?;
            num.div(&den.map(|d| d + eps))
        }
        NormMode::Layernorm => {
            let d_h = num.shape()[num.rank() - 1];
            let (ones, zeros);
            let (gamma, beta) = match ln_affine {
                Some((g, b)) => (g, b),
                None => {
                    ones = Tensor::ones(&[d_h]);
                    zeros = Tensor::zeros(&[d_h]);
                    (&ones, &zeros)
                }
            };
            num.layer_norm_lastdim(gamma, beta, LN_EPS)
        }
    }
}

/// Quadratic reference: softmax(q k^T * scale) v. Materializes the full
/// score matrix, so keep it to oracle-sized inputs.
pub fn softmax_attention(q: &Tensor, k: &Tensor, v: &Tensor, scale: f64) -> TensorResult<Tensor> {
    let scores = q.matmul_batched(&k.transpose_last_two()?)?.scale(scale);
    scores.softmax_lastdim().matmul_batched(v)
}

/// One probe measurement: how far the random-feature attention output sits
/// from the exact softmax oracle for a given feature count and draw.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelErrorRecord {
    pub m: usize,
    pub seed: u64,
    pub frob_error: f64,
}

/// Sweeps feature counts and seeds on fixed (q, k, v), comparing the
/// denominator-mode linear attention against the softmax oracle in
/// Frobenius norm. Inputs are [b, h, n, d_h]; each (m, seed) pair draws a
/// fresh projection, so the table is bit-reproducible from the seeds.
pub fn kernel_error_probe(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    m_values: &[usize],
    seeds: &[u64],
    init_kind: RInit,
) -> TensorResult<Vec<KernelErrorRecord>> {
    let heads = q.shape()[1];
    let d_h = q.shape()[3];
    let exact = softmax_attention(q, k, v, 1.0 / (d_h as f64).sqrt())?;
    let mut records = Vec::with_capacity(m_values.len() * seeds.len());
    for &m in m_values {
        for &seed in seeds {
            let map = RandomFeatureMap::sample(
                &mut RngState::new(seed),
                heads,
                d_h,
                m,
                DEFAULT_BETA,
                init_kind,
                false,
            );
            let pq = phi(q, &map, WhichR::Q)?;
            let pk = phi(k, &map, WhichR::K)?;
            let approx = linear_attention(&pq, &pk, v, NormMode::Denominator, DENOM_EPS, None)?;
            let frob_error = approx.sub(&exact)?.frobenius_norm();
            records.push(KernelErrorRecord { m, seed, frob_error });
        }
    }
    Ok(records)
}

/// Per-m median of the probe errors, in the order the m values first appear.
pub fn probe_medians(records: &[KernelErrorRecord]) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = Vec::new();
    for r in records {
        if !order.contains(&r.m) {
            order.push(r.m);
        }
    }
    order
        .into_iter()
        .map(|m| {
            let mut errs: Vec<f64> = records
                .iter()
                .filter(|r| r.m == m)
                .map(|r| r.frob_error)
                .collect();
            errs.sort_by(|a, b| a.total_cmp(b));
            let mid = errs.len() / 2;
            let med = if errs.len() % 2 == 1 {
                errs[mid]
            } else {
                0.5 * (errs[mid - 1] + errs[mid])
            };
            (m, med)
        })
        .collect()
}
