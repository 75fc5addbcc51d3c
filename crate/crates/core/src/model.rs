//! Encoder-only classifier around either attention backend, the synthetic
//! marker-position task, an Adam training loop, and checkpointing.
//!
//! Block layout is post-norm: attention, residual add, layer norm, then a
//! ReLU feed-forward, residual add, layer norm. Positional information is
//! a learned embedding table. Both choices are fixed here and tested, not
//! configurable.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{
    bind_params, init_wersa_params, mha_graph, wersa_graph, AblationFlags, AttentionError,
    BoundWersa, WersaConfig, WersaParams,
};
use crate::autograd::{AutogradError, Tape, Var};
use crate::rng::RngState;
use crate::spectral::{NormMode, RInit, DEFAULT_BETA, DENOM_EPS};
use crate::tensor::{sample_gaussian, Tensor, TensorError};

const LN_EPS: f64 = 1e-5;
const CHECKPOINT_MAGIC: &[u8; 4] = b"WENC";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Autograd(#[from] AutogradError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("token id {id} is outside the vocabulary ({vocab} entries)")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("sequence length {n} exceeds max_len {max_len}")]
    SequenceTooLong { n: usize, max_len: usize },
    #[error("batch mixes sequence lengths {a} and {b}")]
    RaggedBatch { a: usize, b: usize },
    #[error("training diverged in epoch {epoch}: first non-finite value in {param}")]
    Diverged { epoch: usize, param: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type ModelResult<T> = Result<T, ModelError>;

/// Which attention runs inside each block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Wersa,
    /// Exact softmax attention; quadratic, used as the baseline.
    Standard,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub num_classes: usize,
    pub backend: Backend,
    pub levels: usize,
    pub features: usize,
    pub norm_mode: NormMode,
    pub r_init: RInit,
    pub share_r_across_heads: bool,
    pub ablation: AblationFlags,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl EncoderConfig {
    /// The marker-task training setup, sequence length 128. Kept slim on
    /// purpose: one block and d_model 16 cannot memorize a few thousand
    /// filler patterns, which forces the positional rule; a wider model
    /// happily overfits this task without ever generalizing.
    pub fn toy_default() -> EncoderConfig {
        EncoderConfig {
            layers: 1,
            d_model: 16,
            heads: 2,
            ffn_dim: 32,
            vocab_size: 16,
            max_len: 128,
            num_classes: 2,
            backend: Backend::Wersa,
            levels: 2,
            features: 64,
            norm_mode: NormMode::Denominator,
            r_init: RInit::Gaussian,
            share_r_across_heads: false,
            ablation: AblationFlags::default(),
            lr: 3e-3,
            batch_size: 16,
            epochs: 20,
            seed: 42,
        }
    }

    /// Per-layer attention settings; the seed is filled in at init time.
    pub fn attention_config(&self) -> WersaConfig {
        WersaConfig {
            d_model: self.d_model,
            heads: self.heads,
            levels: self.levels,
            features: self.features,
            beta_init: DEFAULT_BETA,
            eps: DENOM_EPS,
            norm_mode: self.norm_mode,
            r_init: self.r_init,
            share_r_across_heads: self.share_r_across_heads,
            ablation: self.ablation,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub attn: WersaParams,
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub embedding: Tensor,
    pub positional: Tensor,
    pub layers: Vec<LayerParams>,
    pub classifier_w: Tensor,
    pub classifier_b: Tensor,
}

impl EncoderParams {
    /// Every tensor in serialization order, frozen projections included.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["embedding".to_string(), "positional".to_string()];
        for (i, layer) in self.layers.iter().enumerate() {
            for a in [
                "w_q",
                "w_k",
                "w_v",
                "w_out",
                "w_filter",
                "b_filter",
                "scale_weights",
                "beta",
                "r_q",
                "r_k",
            ] {
                names.push(format!("layer{i}.attn.{a}"));
            }
            if layer.attn.ln_gamma.is_some() {
                names.push(format!("layer{i}.attn.ln_gamma"));
                names.push(format!("layer{i}.attn.ln_beta"));
            }
            for f in [
                "ln1_gamma", "ln1_beta", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2", "ln2_gamma",
                "ln2_beta",
            ] {
                names.push(format!("layer{i}.{f}"));
            }
        }
        names.push("classifier_w".to_string());
        names.push("classifier_b".to_string());
        names
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        match name {
            "embedding" => return Some(&self.embedding),
            "positional" => return Some(&self.positional),
            "classifier_w" => return Some(&self.classifier_w),
            "classifier_b" => return Some(&self.classifier_b),
            _ => {}
        }
        let rest = name.strip_prefix("layer")?;
        let dot = rest.find('.')?;
        let idx: usize = rest[..dot].parse().ok()?;
        let layer = self.layers.get(idx)?;
        let field = &rest[dot + 1..];
        if let Some(attn_field) = field.strip_prefix("attn.") {
            return layer.attn.tensor(attn_field);
        }
        match field {
            "ln1_gamma" => Some(&layer.ln1_gamma),
            "ln1_beta" => Some(&layer.ln1_beta),
            "ffn_w1" => Some(&layer.ffn_w1),
            "ffn_b1" => Some(&layer.ffn_b1),
            "ffn_w2" => Some(&layer.ffn_w2),
            "ffn_b2" => Some(&layer.ffn_b2),
            "ln2_gamma" => Some(&layer.ln2_gamma),
            "ln2_beta" => Some(&layer.ln2_beta),
            _ => None,
        }
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        match name {
            "embedding" => return Some(&mut self.embedding),
            "positional" => return Some(&mut self.positional),
            "classifier_w" => return Some(&mut self.classifier_w),
            "classifier_b" => return Some(&mut self.classifier_b),
            _ => {}
        }
        let rest = name.strip_prefix("layer")?;
        let dot = rest.find('.')?;
        let idx: usize = rest[..dot].parse().ok()?;
        let layer = self.layers.get_mut(idx)?;
        let field = rest[dot + 1..].to_string();
        if let Some(attn_field) = field.strip_prefix("attn.") {
            return layer.attn.tensor_mut(attn_field);
        }
        match field.as_str() {
            "ln1_gamma" => Some(&mut layer.ln1_gamma),
            "ln1_beta" => Some(&mut layer.ln1_beta),
            "ffn_w1" => Some(&mut layer.ffn_w1),
            "ffn_b1" => Some(&mut layer.ffn_b1),
            "ffn_w2" => Some(&mut layer.ffn_w2),
            "ffn_b2" => Some(&mut layer.ffn_b2),
            "ln2_gamma" => Some(&mut layer.ln2_gamma),
            "ln2_beta" => Some(&mut layer.ln2_beta),
            _ => None,
        }
    }
}

/// Fresh encoder parameters from the config seed. One generator drives the
/// whole init; each attention layer draws its own sub-seed from it, so the
/// layout is reproducible and layers are decorrelated.
pub fn init_encoder_params(cfg: &EncoderConfig) -> ModelResult<EncoderParams> {
    let attn_cfg = cfg.attention_config();
    attn_cfg.validate()?;
    let mut rng = RngState::new(cfg.seed);
    let d = cfg.d_model;
    let emb_scale = 1.0 / (d as f64).sqrt();
    let embedding = sample_gaussian(&mut rng, &[cfg.vocab_size, d]).scale(emb_scale);
    let positional = sample_gaussian(&mut rng, &[cfg.max_len, d]).scale(emb_scale);
    let mut layers = Vec::with_capacity(cfg.layers);
    for _ in 0..cfg.layers {
        let mut layer_attn_cfg = attn_cfg.clone();
        layer_attn_cfg.seed = rng.next_u64();
        let attn = init_wersa_params(&layer_attn_cfg)?;
        let ffn_w1 = sample_gaussian(&mut rng, &[d, cfg.ffn_dim]).scale(emb_scale);
        let ffn_w2 =
            sample_gaussian(&mut rng, &[cfg.ffn_dim, d]).scale(1.0 / (cfg.ffn_dim as f64).sqrt());
        layers.push(LayerParams {
            attn,
            ln1_gamma: Tensor::ones(&[d]),
            ln1_beta: Tensor::zeros(&[d]),
            ffn_w1,
            ffn_b1: Tensor::zeros(&[cfg.ffn_dim]),
            ffn_w2,
            ffn_b2: Tensor::zeros(&[d]),
            ln2_gamma: Tensor::ones(&[d]),
            ln2_beta: Tensor::zeros(&[d]),
        });
    }
    let classifier_w = sample_gaussian(&mut rng, &[d, cfg.num_classes]).scale(emb_scale);
    Ok(EncoderParams {
        embedding,
        positional,
        layers,
        classifier_w,
        classifier_b: Tensor::zeros(&[cfg.num_classes]),
    })
}

struct BoundLayer {
    attn: BoundWersa,
    ln1_gamma: Var,
    ln1_beta: Var,
    ffn_w1: Var,
    ffn_b1: Var,
    ffn_w2: Var,
    ffn_b2: Var,
    ln2_gamma: Var,
    ln2_beta: Var,
}

/// Tape handles for the whole model.
pub struct BoundEncoder {
    embedding: Var,
    positional: Var,
    layers: Vec<BoundLayer>,
    classifier_w: Var,
    classifier_b: Var,
}

impl BoundEncoder {
    /// (name, var, frozen) for the optimizer. Frozen projections are not
    /// listed; ablation-frozen groups are listed with the flag set.
    pub fn entries(&self, cfg: &EncoderConfig) -> Vec<(String, Var, bool)> {
        let attn_cfg = cfg.attention_config();
        let mut out = vec![
            ("embedding".to_string(), self.embedding, false),
            ("positional".to_string(), self.positional, false),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, var, frozen) in layer.attn.entries(&attn_cfg) {
                out.push((format!("layer{i}.attn.{name}"), var, frozen));
            }
            for (name, var) in [
                ("ln1_gamma", layer.ln1_gamma),
                ("ln1_beta", layer.ln1_beta),
                ("ffn_w1", layer.ffn_w1),
                ("ffn_b1", layer.ffn_b1),
                ("ffn_w2", layer.ffn_w2),
                ("ffn_b2", layer.ffn_b2),
                ("ln2_gamma", layer.ln2_gamma),
                ("ln2_beta", layer.ln2_beta),
            ] {
                out.push((format!("layer{i}.{name}"), var, false));
            }
        }
        out.push(("classifier_w".to_string(), self.classifier_w, false));
        out.push(("classifier_b".to_string(), self.classifier_b, false));
        out
    }
}

pub fn bind_encoder(tape: &mut Tape, params: &EncoderParams) -> BoundEncoder {
    BoundEncoder {
        embedding: tape.leaf(params.embedding.clone()),
        positional: tape.leaf(params.positional.clone()),
        layers: params
            .layers
            .iter()
            .map(|l| BoundLayer {
                attn: bind_params(tape, &l.attn),
                ln1_gamma: tape.leaf(l.ln1_gamma.clone()),
                ln1_beta: tape.leaf(l.ln1_beta.clone()),
                ffn_w1: tape.leaf(l.ffn_w1.clone()),
                ffn_b1: tape.leaf(l.ffn_b1.clone()),
                ffn_w2: tape.leaf(l.ffn_w2.clone()),
                ffn_b2: tape.leaf(l.ffn_b2.clone()),
                ln2_gamma: tape.leaf(l.ln2_gamma.clone()),
                ln2_beta: tape.leaf(l.ln2_beta.clone()),
            })
            .collect(),
        classifier_w: tape.leaf(params.classifier_w.clone()),
        classifier_b: tape.leaf(params.classifier_b.clone()),
    }
}

/// Records the full classifier forward; returns the logits node
/// [batch, num_classes].
pub fn encoder_graph(
    tape: &mut Tape,
    cfg: &EncoderConfig,
    bound: &BoundEncoder,
    tokens: &[&[usize]],
    training: bool,
) -> ModelResult<Var> {
    let b = tokens.len();
    assert!(b > 0, "empty batch");
    let n = tokens[0].len();
    for row in tokens {
        if row.len() != n {
            return Err(ModelError::RaggedBatch { a: n, b: row.len() });
        }
        for &id in *row {
            if id >= cfg.vocab_size {
                return Err(ModelError::TokenOutOfRange {
                    id,
                    vocab: cfg.vocab_size,
                });
            }
        }
    }
    if n > cfg.max_len {
        return Err(ModelError::SequenceTooLong { n, max_len: cfg.max_len });
    }

    let flat: Vec<usize> = tokens.iter().flat_map(|r| r.iter().copied()).collect();
    let embedded = tape.gather(bound.embedding, &flat, &[b, n])?;
    let positions: Vec<usize> = (0..n).collect();
    let pos = tape.gather(bound.positional, &positions, &[n])?;
    let mut hidden = tape.add(embedded, pos)?;

    let attn_cfg = cfg.attention_config();
    for layer in &bound.layers {
        let attn_out = match cfg.backend {
            Backend::Wersa => {
                wersa_graph(
                    tape, &attn_cfg, &layer.attn, hidden, hidden, hidden, None, training, None,
                )?
                .out
            }
            Backend::Standard => {
                mha_graph(tape, &attn_cfg, &layer.attn, hidden, hidden, hidden)?
            }
        };
        let res = tape.add(hidden, attn_out)?;
        hidden = tape.layer_norm(res, layer.ln1_gamma, layer.ln1_beta, LN_EPS)?;
        let mid = tape.matmul(hidden, layer.ffn_w1)?;
        let mid = tape.add(mid, layer.ffn_b1)?;
        let mid = tape.relu(mid);
        let ffn = tape.matmul(mid, layer.ffn_w2)?;
        let ffn = tape.add(ffn, layer.ffn_b2)?;
        let res2 = tape.add(hidden, ffn)?;
        hidden = tape.layer_norm(res2, layer.ln2_gamma, layer.ln2_beta, LN_EPS)?;
    }

    let pooled = tape.mean_axis(hidden, 1)?;
    let logits = tape.matmul(pooled, bound.classifier_w)?;
    Ok(tape.add(logits, bound.classifier_b)?)
}

/// One-shot inference forward.
pub fn encoder_forward(
    cfg: &EncoderConfig,
    params: &EncoderParams,
    tokens: &[&[usize]],
) -> ModelResult<Tensor> {
    let mut tape = Tape::new();
    let bound = bind_encoder(&mut tape, params);
    let logits = encoder_graph(&mut tape, cfg, &bound, tokens, false)?;
    Ok(tape.value(logits).clone())
}

// ---------------------------------------------------------------------------
// Toy task

pub const MARKER_TOKEN: usize = 1;
const FIRST_FILLER: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToySample {
    pub tokens: Vec<usize>,
    pub label: usize,
}

/// Marker-position classification: one marker token, label = which of the
/// `num_classes` equal segments holds it, fillers i.i.d. from the rest of
/// the vocabulary. Labels are assigned round-robin before a final shuffle,
/// so classes are balanced to within one sample.
pub fn make_toy_task(
    seed: u64,
    n: usize,
    size: usize,
    num_classes: usize,
    vocab_size: usize,
) -> Vec<ToySample> {
    assert!(n >= 32, "sequence too short for a positional task");
    assert!(num_classes >= 2 && n % num_classes == 0);
    assert!(vocab_size > FIRST_FILLER + 1, "need at least two filler ids");
    let mut rng = RngState::new(seed);
    let segment = n / num_classes;
    let filler_span = vocab_size - FIRST_FILLER;
    let mut samples = Vec::with_capacity(size);
    for i in 0..size {
        let label = i % num_classes;
        let marker_pos = label * segment + rng.next_below(segment);
        let mut tokens: Vec<usize> = (0..n)
            .map(|_| FIRST_FILLER + rng.next_below(filler_span))
            .collect();
        tokens[marker_pos] = MARKER_TOKEN;
        samples.push(ToySample { tokens, label });
    }
    rng.shuffle(&mut samples);
    samples
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Adam {
    moments: HashMap<String, (Tensor, Tensor)>,
    step: u64,
}

impl Adam {
    fn new() -> Adam {
        Adam {
            moments: HashMap::new(),
            step: 0,
        }
    }

    fn begin_step(&mut self) {
        self.step += 1;
    }

    fn update(&mut self, name: &str, value: &mut Tensor, grad: &Tensor, lr: f64) {
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (Tensor::zeros(grad.shape()), Tensor::zeros(grad.shape())));
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for ((w, g), (mi, vi)) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * g;
            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * g * g;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *w -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    let c = logits.shape()[1];
    let mut correct = 0;
    for (row, &label) in logits.data().chunks_exact(c).zip(labels) {
        let mut best = 0;
        for j in 1..c {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    correct
}

fn evaluate(
    cfg: &EncoderConfig,
    params: &EncoderParams,
    data: &[ToySample],
) -> ModelResult<(f64, f64)> {
    let mut total_loss = 0.0;
    let mut total_correct = 0usize;
    for chunk in data.chunks(cfg.batch_size.max(1)) {
        let tokens: Vec<&[usize]> = chunk.iter().map(|s| s.tokens.as_slice()).collect();
        let labels: Vec<usize> = chunk.iter().map(|s| s.label).collect();
        let mut tape = Tape::new();
        let bound = bind_encoder(&mut tape, params);
        let logits = encoder_graph(&mut tape, cfg, &bound, &tokens, false)?;
        let loss = tape.cross_entropy(logits, &labels)?;
        total_loss += tape.value(loss).data()[0] * chunk.len() as f64;
        total_correct += count_correct(tape.value(logits), &labels);
    }
    let count = data.len() as f64;
    Ok((total_loss / count, total_correct as f64 / count))
}

fn first_nonfinite_param(params: &EncoderParams) -> Option<String> {
    for name in params.tensor_names() {
        if let Some(t) = params.tensor(&name) {
            if t.data().iter().any(|v| !v.is_finite()) {
                return Some(name);
            }
        }
    }
    None
}

/// Minibatch Adam over the toy task. Per-epoch metrics are logged for both
/// splits; the trained parameters come back with the log. Deterministic:
/// init comes from `cfg.seed` and epoch shuffles from a derived stream.
pub fn train(
    cfg: &EncoderConfig,
    train_set: &[ToySample],
    val_set: &[ToySample],
) -> ModelResult<(Vec<LogRecord>, EncoderParams)> {
    let mut params = init_encoder_params(cfg)?;
    // Distinct stream from the init draw so adding a parameter later does
    // not silently reorder the batches.
    let mut shuffle_rng = RngState::new(cfg.seed ^ 0x517c_c1b7_2722_0a95);
    let mut adam = Adam::new();
    let mut log = Vec::new();

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0usize;

        for batch_ids in order.chunks(cfg.batch_size.max(1)) {
            let tokens: Vec<&[usize]> = batch_ids
                .iter()
                .map(|&i| train_set[i].tokens.as_slice())
                .collect();
            let labels: Vec<usize> = batch_ids.iter().map(|&i| train_set[i].label).collect();

            let mut tape = Tape::new();
            let bound = bind_encoder(&mut tape, &params);
            let logits = encoder_graph(&mut tape, cfg, &bound, &tokens, true)?;
            let loss = tape.cross_entropy(logits, &labels)?;
            let loss_value = tape.value(loss).data()[0];
            if !loss_value.is_finite() {
                let param =
                    first_nonfinite_param(&params).unwrap_or_else(|| "logits".to_string());
                return Err(ModelError::Diverged { epoch, param });
            }
            epoch_loss += loss_value * batch_ids.len() as f64;
            epoch_correct += count_correct(tape.value(logits), &labels);

            let grads = tape.backward(loss)?;
            adam.begin_step();
            for (name, var, frozen) in bound.entries(cfg) {
                if frozen {
                    continue;
                }
                let Some(grad) = grads.wrt(var) else { continue };
                let value = params
                    .tensor_mut(&name)
                    .expect("entry names map to tensors");
                adam.update(&name, value, grad, cfg.lr);
            }
            if let Some(param) = first_nonfinite_param(&params) {
                return Err(ModelError::Diverged { epoch, param });
            }
        }

        let count = train_set.len() as f64;
        log.push(LogRecord {
            epoch,
            split: Split::Train,
            loss: epoch_loss / count,
            accuracy: epoch_correct as f64 / count,
        });
        let (val_loss, val_acc) = evaluate(cfg, &params, val_set)?;
        log.push(LogRecord {
            epoch,
            split: Split::Val,
            loss: val_loss,
            accuracy: val_acc,
        });
    }
    Ok((log, params))
}

// ---------------------------------------------------------------------------
// Checkpoints

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: EncoderConfig,
    rng: RngState,
    tensors: Vec<TensorMeta>,
}

/// Versioned container: magic, version, JSON header length, JSON header
/// (config, RNG state, tensor names/shapes), then each tensor's raw
/// little-endian f64 buffer in header order.
pub fn save_checkpoint(
    w: &mut impl Write,
    cfg: &EncoderConfig,
    params: &EncoderParams,
    rng: &RngState,
) -> ModelResult<()> {
    let names = params.tensor_names();
    let tensors: Vec<TensorMeta> = names
        .iter()
        .map(|name| TensorMeta {
            name: name.clone(),
            shape: params.tensor(name).expect("listed name").shape().to_vec(),
        })
        .collect();
    let header = CheckpointHeader {
        config: cfg.clone(),
        rng: *rng,
        tensors,
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| ModelError::Checkpoint(format!("header encode: {e}")))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for name in &names {
        let t = params.tensor(name).expect("listed name");
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Inverse of [`save_checkpoint`]; the returned parameters reproduce
/// forward outputs bit-exactly.
pub fn load_checkpoint(
    r: &mut impl Read,
) -> ModelResult<(EncoderConfig, EncoderParams, RngState)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic".to_string()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let mut len8 = [0u8; 8];
    r.read_exact(&mut len8)?;
    let header_len = u64::from_le_bytes(len8) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| ModelError::Checkpoint(format!("header decode: {e}")))?;

    // Build a structurally correct parameter set, then overwrite every
    // tensor from the file, so nothing of the init survives.
    let mut params = init_encoder_params(&header.config)?;
    let expected = params.tensor_names();
    let found: Vec<&str> = header.tensors.iter().map(|t| t.name.as_str()).collect();
    if expected != found {
        return Err(ModelError::Checkpoint(
            "tensor list does not match the config's layout".to_string(),
        ));
    }
    for meta in &header.tensors {
        let slot = params
            .tensor_mut(&meta.name)
            .expect("names validated above");
        if slot.shape() != meta.shape.as_slice() {
            return Err(ModelError::Checkpoint(format!(
                "{}: shape {:?} in file, {:?} expected",
                meta.name,
                meta.shape,
                slot.shape()
            )));
        }
        let mut buf = vec![0u8; slot.len() * 8];
        r.read_exact(&mut buf)?;
        for (slot_v, chunk) in slot.data_mut().iter_mut().zip(buf.chunks_exact(8)) {
            *slot_v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    Ok((header.config, params, header.rng))
}
