//! Multi-head wavelet-filtered random-feature attention, the exact softmax
//! multi-head layer used as its oracle, and the ablation switches.
//!
//! The full forward runs: project and split heads; Haar-analyze the query
//! and key streams; gate each scale block with sigmoid filters computed
//! from the pooled pre-wavelet queries times learned per-scale weights;
//! synthesize back; map through the ReLU random-feature map; contract
//! against the projected values in feature space; merge heads and project
//! out. Values are never wavelet-filtered. An attention mask argument is
//! accepted for signature compatibility and ignored: this is non-causal
//! encoder attention.
//!
//! Everything runs through the autograd tape so training and inference
//! share one code path; inference simply drops the tape afterwards.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{AutogradError, Tape, Var};
use crate::rng::RngState;
use crate::spectral::{
    NormMode, RInit, RandomFeatureMap, BW_FLOOR, DEFAULT_BETA, DEFAULT_FEATURES, DENOM_EPS,
    LN_EPS,
};
use crate::tensor::{sample_gaussian, Tensor, TensorError};
use crate::wavelet::{self, CachedCoeffs, CoeffCache, WaveletError};

#[derive(Debug, Error)]
pub enum AttentionError {
    #[error("d_model {d_model} is not divisible by heads {heads}")]
    HeadSplit { d_model: usize, heads: usize },
    #[error("config needs {field} >= 1")]
    ZeroField { field: &'static str },
    #[error("expected input shaped [batch, n, {d_model}], got {got:?}")]
    BadInput { d_model: usize, got: Vec<usize> },
    #[error("query and key/value batches disagree: {q:?} vs {kv:?}")]
    MixedInputs { q: Vec<usize>, kv: Vec<usize> },
    #[error(transparent)]
    Autograd(#[from] AutogradError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
}

pub type AttentionResult<T> = Result<T, AttentionError>;

/// Which stages to disable; each flag is independent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Skip analysis/gating/synthesis entirely; queries and keys pass
    /// through unfiltered.
    pub no_wavelet: bool,
    /// Force the per-scale filters to 1 instead of the learned sigmoid.
    pub no_adaptive_filters: bool,
    /// Force the per-scale weights to 1 instead of the learned vector.
    pub no_scale_weights: bool,
    /// Replace the feature-space contraction with exact softmax attention;
    /// the one deliberately quadratic variant.
    pub no_random_features: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WersaConfig {
    pub d_model: usize,
    pub heads: usize,
    /// Wavelet decomposition depth.
    pub levels: usize,
    /// Random feature count per head.
    pub features: usize,
    pub beta_init: f64,
    /// Stabilizer in the attention denominator.
    pub eps: f64,
    pub norm_mode: NormMode,
    pub r_init: RInit,
    /// One frozen projection pair shared by every head instead of one per
    /// head.
    pub share_r_across_heads: bool,
    pub ablation: AblationFlags,
    pub seed: u64,
}

impl WersaConfig {
    pub fn new(d_model: usize, heads: usize) -> WersaConfig {
        WersaConfig {
            d_model,
            heads,
            levels: 2,
            features: DEFAULT_FEATURES,
            beta_init: DEFAULT_BETA,
            eps: DENOM_EPS,
            norm_mode: NormMode::Denominator,
            r_init: RInit::Gaussian,
            share_r_across_heads: false,
            ablation: AblationFlags::default(),
            seed: 0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> AttentionResult<()> {
        if self.d_model == 0 {
            return Err(AttentionError::ZeroField { field: "d_model" });
        }
        if self.heads == 0 {
            return Err(AttentionError::ZeroField { field: "heads" });
        }
        if self.d_model % self.heads != 0 {
            return Err(AttentionError::HeadSplit {
                d_model: self.d_model,
                heads: self.heads,
            });
        }
        if self.levels == 0 {
            return Err(AttentionError::ZeroField { field: "levels" });
        }
        if self.features == 0 {
            return Err(AttentionError::ZeroField { field: "features" });
        }
        Ok(())
    }
}

/// All layer parameters. The feature map's projections are frozen; every
/// other tensor is a candidate for the optimizer, subject to the ablation
/// freeze rules in [`trainable_parameters`].
#[derive(Debug, Clone)]
pub struct WersaParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_out: Tensor,
    /// Affine filter net: pooled queries [b, h*d_h] -> logits [b, L+1].
    pub w_filter: Tensor,
    pub b_filter: Tensor,
    /// Per-scale gains, one per wavelet block.
    pub scale_weights: Tensor,
    pub feature_map: RandomFeatureMap,
    /// Present only in layernorm mode.
    pub ln_gamma: Option<Tensor>,
    pub ln_beta: Option<Tensor>,
}

impl WersaParams {
    /// Named access used by checkpoints and finite-difference drivers.
    /// Frozen projections are reachable as "r_q"/"r_k" for serialization
    /// even though they never appear in the trainable list.
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        match name {
            "w_q" => Some(&self.w_q),
            "w_k" => Some(&self.w_k),
            "w_v" => Some(&self.w_v),
            "w_out" => Some(&self.w_out),
            "w_filter" => Some(&self.w_filter),
            "b_filter" => Some(&self.b_filter),
            "scale_weights" => Some(&self.scale_weights),
            "beta" => Some(&self.feature_map.beta),
            "r_q" => Some(&self.feature_map.r_q),
            "r_k" => Some(&self.feature_map.r_k),
            "ln_gamma" => self.ln_gamma.as_ref(),
            "ln_beta" => self.ln_beta.as_ref(),
            _ => None,
        }
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        match name {
            "w_q" => Some(&mut self.w_q),
            "w_k" => Some(&mut self.w_k),
            "w_v" => Some(&mut self.w_v),
            "w_out" => Some(&mut self.w_out),
            "w_filter" => Some(&mut self.w_filter),
            "b_filter" => Some(&mut self.b_filter),
            "scale_weights" => Some(&mut self.scale_weights),
            "beta" => Some(&mut self.feature_map.beta),
            "r_q" => Some(&mut self.feature_map.r_q),
            "r_k" => Some(&mut self.feature_map.r_k),
            "ln_gamma" => self.ln_gamma.as_mut(),
            "ln_beta" => self.ln_beta.as_mut(),
            _ => None,
        }
    }
}

/// Fresh parameters from the config seed.
///
/// Sampling order is part of the format: w_q, w_k, w_v, w_out, w_filter,
/// then the feature projections (all of r_q, then all of r_k). Projections
/// use 1/sqrt(fan_in) Gaussian scaling; the filter bias starts at zero and
/// the scale weights at one, so the initial gate is the plain sigmoid
/// response to pooled queries.
pub fn init_wersa_params(cfg: &WersaConfig) -> AttentionResult<WersaParams> {
    cfg.validate()?;
    let mut rng = RngState::new(cfg.seed);
    let inner = cfg.heads * cfg.head_dim();
    let lp1 = cfg.levels + 1;
    let proj_scale = 1.0 / (cfg.d_model as f64).sqrt();
    let inner_scale = 1.0 / (inner as f64).sqrt();
    let w_q = sample_gaussian(&mut rng, &[cfg.d_model, inner]).scale(proj_scale);
    let w_k = sample_gaussian(&mut rng, &[cfg.d_model, inner]).scale(proj_scale);
    let w_v = sample_gaussian(&mut rng, &[cfg.d_model, inner]).scale(proj_scale);
    let w_out = sample_gaussian(&mut rng, &[inner, cfg.d_model]).scale(inner_scale);
    let w_filter = sample_gaussian(&mut rng, &[inner, lp1]).scale(inner_scale);
    let feature_map = RandomFeatureMap::sample(
        &mut rng,
        cfg.heads,
        cfg.head_dim(),
        cfg.features,
        cfg.beta_init,
        cfg.r_init,
        cfg.share_r_across_heads,
    );
    let (ln_gamma, ln_beta) = match cfg.norm_mode {
        NormMode::Layernorm => (
            Some(Tensor::ones(&[cfg.head_dim()])),
            Some(Tensor::zeros(&[cfg.head_dim()])),
        ),
        NormMode::Denominator => (None, None),
    };
    Ok(WersaParams {
        w_q,
        w_k,
        w_v,
        w_out,
        w_filter,
        b_filter: Tensor::zeros(&[lp1]),
        scale_weights: Tensor::ones(&[lp1]),
        feature_map,
        ln_gamma,
        ln_beta,
    })
}

/// One optimizer-facing parameter: its stable name, current value, and
/// whether the active ablation freezes it.
#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub frozen: bool,
}

fn freeze_flags(cfg: &WersaConfig) -> (bool, bool, bool) {
    let a = cfg.ablation;
    let filter_frozen = a.no_adaptive_filters || a.no_wavelet;
    let scale_frozen = a.no_scale_weights || a.no_wavelet;
    let beta_frozen = a.no_random_features;
    (filter_frozen, scale_frozen, beta_frozen)
}

/// Deterministic enumeration of learnable tensors. The frozen random
/// projections are excluded outright; parameters disabled by an ablation
/// stay listed but carry `frozen = true` so the optimizer skips them.
pub fn trainable_parameters(cfg: &WersaConfig, params: &WersaParams) -> Vec<ParamEntry> {
    let (filter_frozen, scale_frozen, beta_frozen) = freeze_flags(cfg);
    let mut out = vec![
        entry("w_q", &params.w_q, false),
        entry("w_k", &params.w_k, false),
        entry("w_v", &params.w_v, false),
        entry("w_out", &params.w_out, false),
        entry("w_filter", &params.w_filter, filter_frozen),
        entry("b_filter", &params.b_filter, filter_frozen),
        entry("scale_weights", &params.scale_weights, scale_frozen),
        entry("beta", &params.feature_map.beta, beta_frozen),
    ];
    if let (Some(g), Some(b)) = (&params.ln_gamma, &params.ln_beta) {
        out.push(entry("ln_gamma", g, false));
        out.push(entry("ln_beta", b, false));
    }
    out
}

fn entry(name: &str, value: &Tensor, frozen: bool) -> ParamEntry {
    ParamEntry {
        name: name.to_string(),
        value: value.clone(),
        frozen,
    }
}

/// Tape handles for one layer's parameters.
#[derive(Debug, Clone)]
pub struct BoundWersa {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_out: Var,
    pub w_filter: Var,
    pub b_filter: Var,
    pub scale_weights: Var,
    pub beta: Var,
    pub r_q: Var,
    pub r_k: Var,
    pub ln_gamma: Option<Var>,
    pub ln_beta: Option<Var>,
}

impl BoundWersa {
    /// (name, var, frozen) in the same order as [`trainable_parameters`].
    pub fn entries(&self, cfg: &WersaConfig) -> Vec<(&'static str, Var, bool)> {
        let (filter_frozen, scale_frozen, beta_frozen) = freeze_flags(cfg);
        let mut out = vec![
            ("w_q", self.w_q, false),
            ("w_k", self.w_k, false),
            ("w_v", self.w_v, false),
            ("w_out", self.w_out, false),
            ("w_filter", self.w_filter, filter_frozen),
            ("b_filter", self.b_filter, filter_frozen),
            ("scale_weights", self.scale_weights, scale_frozen),
            ("beta", self.beta, beta_frozen),
        ];
        if let (Some(g), Some(b)) = (self.ln_gamma, self.ln_beta) {
            out.push(("ln_gamma", g, false));
            out.push(("ln_beta", b, false));
        }
        out
    }
}

/// Put every parameter on the tape as a leaf.
pub fn bind_params(tape: &mut Tape, params: &WersaParams) -> BoundWersa {
    BoundWersa {
        w_q: tape.leaf(params.w_q.clone()),
        w_k: tape.leaf(params.w_k.clone()),
        w_v: tape.leaf(params.w_v.clone()),
        w_out: tape.leaf(params.w_out.clone()),
        w_filter: tape.leaf(params.w_filter.clone()),
        b_filter: tape.leaf(params.b_filter.clone()),
        scale_weights: tape.leaf(params.scale_weights.clone()),
        beta: tape.leaf(params.feature_map.beta.clone()),
        r_q: tape.leaf(params.feature_map.r_q.clone()),
        r_k: tape.leaf(params.feature_map.r_k.clone()),
        ln_gamma: params.ln_gamma.as_ref().map(|t| tape.leaf(t.clone())),
        ln_beta: params.ln_beta.as_ref().map(|t| tape.leaf(t.clone())),
    }
}

/// Forward results a caller may want beyond the output itself.
#[derive(Debug, Clone, Copy)]
pub struct WersaOutputs {
    pub out: Var,
    /// Per-batch scale filters, [b, L+1]; all-ones under the ablations
    /// that disable them.
    pub filters: Var,
    /// filters * scale_weights, the gate actually applied to the blocks.
    pub gate: Var,
}

fn check_inputs(
    cfg: &WersaConfig,
    q: &[usize],
    k: &[usize],
    v: &[usize],
) -> AttentionResult<(usize, usize)> {
    for s in [q, k, v] {
        if s.len() != 3 || s[2] != cfg.d_model {
            return Err(AttentionError::BadInput {
                d_model: cfg.d_model,
                got: s.to_vec(),
            });
        }
    }
    if q != k || k != v {
        return Err(AttentionError::MixedInputs {
            q: q.to_vec(),
            kv: k.to_vec(),
        });
    }
    Ok((q[0], q[1]))
}

/// Record the full forward on `tape`.
///
/// `mask` is accepted and ignored. With `training` set, the coefficient
/// cache is bypassed entirely (no lookups, stores, or counter changes);
/// otherwise a hit replaces both Haar analyses with cached leaves, which
/// is safe because inference never backpropagates into the inputs.
pub fn wersa_graph(
    tape: &mut Tape,
    cfg: &WersaConfig,
    bound: &BoundWersa,
    x_q: Var,
    x_k: Var,
    x_v: Var,
    _mask: Option<&Tensor>,
    training: bool,
    cache: Option<&mut CoeffCache>,
) -> AttentionResult<WersaOutputs> {
    cfg.validate()?;
    let (b, n) = check_inputs(
        cfg,
        tape.value(x_q).shape().to_vec().as_slice(),
        tape.value(x_k).shape().to_vec().as_slice(),
        tape.value(x_v).shape().to_vec().as_slice(),
    )?;
    let h = cfg.heads;
    let d_h = cfg.head_dim();
    let inner = h * d_h;
    let lp1 = cfg.levels + 1;
    let flags = cfg.ablation;

    let split = |tape: &mut Tape, x: Var, w: Var| -> AttentionResult<Var> {
        let proj = tape.matmul(x, w)?;
        let grouped = tape.reshape(proj, &[b, n, h, d_h])?;
        Ok(tape.swap_axes_1_2(grouped)?)
    };
    let qh = split(tape, x_q, bound.w_q)?;
    let kh = split(tape, x_k, bound.w_k)?;
    let vh = split(tape, x_v, bound.w_v)?;

    // Scale filters come from the pre-wavelet queries: mean over the
    // sequence, heads flattened back together, one vector per batch row.
    let filters = if flags.no_adaptive_filters || flags.no_wavelet {
        tape.leaf(Tensor::ones(&[b, lp1]))
    } else {
        let pooled = tape.mean_axis(qh, 2)?;
        let pooled = tape.reshape(pooled, &[b, inner])?;
        let logits = tape.matmul(pooled, bound.w_filter)?;
        let shifted = tape.add(logits, bound.b_filter)?;
        tape.sigmoid(shifted)
    };
    let omega = if flags.no_scale_weights || flags.no_wavelet {
        tape.leaf(Tensor::ones(&[lp1]))
    } else {
        bound.scale_weights
    };
    let gate = tape.mul(filters, omega)?;

    let (q_f, k_f) = if flags.no_wavelet {
        (qh, kh)
    } else {
        let (q_packed, k_packed) = match (training, cache) {
            (false, Some(cache)) => {
                let digest = wavelet::buffer_digest(&[tape.value(qh), tape.value(kh)]);
                match cache.lookup(digest) {
                    Some(hit) => (tape.leaf(hit.q_packed), tape.leaf(hit.k_packed)),
                    None => {
                        let qp = tape.dwt(qh, cfg.levels)?;
                        let kp = tape.dwt(kh, cfg.levels)?;
                        cache.transforms += 2;
                        cache.store(
                            digest,
                            CachedCoeffs {
                                q_packed: tape.value(qp).clone(),
                                k_packed: tape.value(kp).clone(),
                                levels: cfg.levels,
                                q_len: n,
                                k_len: n,
                            },
                        );
                        (qp, kp)
                    }
                }
            }
            _ => (tape.dwt(qh, cfg.levels)?, tape.dwt(kh, cfg.levels)?),
        };
        let gq = tape.block_scale(q_packed, gate, cfg.levels)?;
        let gk = tape.block_scale(k_packed, gate, cfg.levels)?;
        (
            tape.idwt(gq, cfg.levels, n)?,
            tape.idwt(gk, cfg.levels, n)?,
        )
    };

    let ctx = if flags.no_random_features {
        let attn = tape.scaled_softmax(q_f, k_f, 1.0 / (d_h as f64).sqrt())?;
        tape.matmul(attn, vh)?
    } else {
        let bw = tape.max_const(bound.beta, BW_FLOOR);
        let feat_scale = 1.0 / (cfg.features as f64).sqrt();
        let feature = |tape: &mut Tape, x: Var, r: Var| -> AttentionResult<Var> {
            let proj = tape.matmul(x, r)?;
            let scaled = tape.div(proj, bw)?;
            let active = tape.relu(scaled);
            Ok(tape.scale(active, feat_scale))
        };
        let phi_q = feature(tape, q_f, bound.r_q)?;
        let phi_k = feature(tape, k_f, bound.r_k)?;
        let kt = tape.transpose_last_two(phi_k)?;
        let kv = tape.matmul(kt, vh)?;
        let num = tape.matmul(phi_q, kv)?;
        match cfg.norm_mode {
            NormMode::Denominator => {
                let ksum = tape.sum_axis(phi_k, 2)?;
                let kcol = tape.reshape(ksum, &[b, h, cfg.features, 1])?;
                let den = tape.matmul(phi_q, kcol)?;
                let den = tape.add_const(den, cfg.eps);
                tape.div(num, den)?
            }
            NormMode::Layernorm => {
                let (gv, bv) = match (bound.ln_gamma, bound.ln_beta) {
                    (Some(g), Some(bv)) => (g, bv),
                    _ => (
                        tape.leaf(Tensor::ones(&[d_h])),
                        tape.leaf(Tensor::zeros(&[d_h])),
                    ),
                };
                tape.layer_norm(num, gv, bv, LN_EPS)?
            }
        }
    };

    let merged = tape.swap_axes_1_2(ctx)?;
    let merged = tape.reshape(merged, &[b, n, inner])?;
    let out = tape.matmul(merged, bound.w_out)?;
    Ok(WersaOutputs { out, filters, gate })
}

/// Exact softmax multi-head attention on the tape; the quadratic oracle.
/// Uses the same projection and output weights as the main layer.
pub fn mha_graph(
    tape: &mut Tape,
    cfg: &WersaConfig,
    bound: &BoundWersa,
    x_q: Var,
    x_k: Var,
    x_v: Var,
) -> AttentionResult<Var> {
    cfg.validate()?;
    let (b, n) = check_inputs(
        cfg,
        tape.value(x_q).shape().to_vec().as_slice(),
        tape.value(x_k).shape().to_vec().as_slice(),
        tape.value(x_v).shape().to_vec().as_slice(),
    )?;
    let h = cfg.heads;
    let d_h = cfg.head_dim();
    let split = |tape: &mut Tape, x: Var, w: Var| -> AttentionResult<Var> {
        let proj = tape.matmul(x, w)?;
        let grouped = tape.reshape(proj, &[b, n, h, d_h])?;
        Ok(tape.swap_axes_1_2(grouped)?)
    };
    let qh = split(tape, x_q, bound.w_q)?;
    let kh = split(tape, x_k, bound.w_k)?;
    let vh = split(tape, x_v, bound.w_v)?;
    let attn = tape.scaled_softmax(qh, kh, 1.0 / (d_h as f64).sqrt())?;
    let ctx = tape.matmul(attn, vh)?;
    let merged = tape.swap_axes_1_2(ctx)?;
    let merged = tape.reshape(merged, &[b, n, h * d_h])?;
    Ok(tape.matmul(merged, bound.w_out)?)
}

/// One-shot forward: builds a private tape and returns the output tensor.
pub fn wersa_forward(
    cfg: &WersaConfig,
    params: &WersaParams,
    x_q: &Tensor,
    x_k: &Tensor,
    x_v: &Tensor,
    mask: Option<&Tensor>,
    training: bool,
) -> AttentionResult<Tensor> {
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params);
    let (q, k, v) = (
        tape.leaf(x_q.clone()),
        tape.leaf(x_k.clone()),
        tape.leaf(x_v.clone()),
    );
    let outs = wersa_graph(&mut tape, cfg, &bound, q, k, v, mask, training, None)?;
    Ok(tape.value(outs.out).clone())
}

/// Inference forward that consults (and fills) a coefficient cache keyed by
/// the post-projection query/key streams.
pub fn wersa_forward_cached(
    cfg: &WersaConfig,
    params: &WersaParams,
    x_q: &Tensor,
    x_k: &Tensor,
    x_v: &Tensor,
    mask: Option<&Tensor>,
    cache: &mut CoeffCache,
) -> AttentionResult<Tensor> {
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params);
    let (q, k, v) = (
        tape.leaf(x_q.clone()),
        tape.leaf(x_k.clone()),
        tape.leaf(x_v.clone()),
    );
    let outs = wersa_graph(&mut tape, cfg, &bound, q, k, v, mask, false, Some(cache))?;
    Ok(tape.value(outs.out).clone())
}

/// One-shot exact softmax multi-head forward.
pub fn mha_forward(
    cfg: &WersaConfig,
    params: &WersaParams,
    x_q: &Tensor,
    x_k: &Tensor,
    x_v: &Tensor,
) -> AttentionResult<Tensor> {
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params);
    let (q, k, v) = (
        tape.leaf(x_q.clone()),
        tape.leaf(x_k.clone()),
        tape.leaf(x_v.clone()),
    );
    let out = mha_graph(&mut tape, cfg, &bound, q, k, v)?;
    Ok(tape.value(out).clone())
}
