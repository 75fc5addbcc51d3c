//! Experiment drivers behind the CLI: timing sweeps, an analytical FLOPS
//! model, approximation-error and gradient-check runs, toy training, the
//! ablation grid, and the CSV emitters for all of them.
//!
//! CSV outputs are byte-stable for a fixed seed except wall-time columns.
//! Every writer takes `impl io::Write`, so tests compare in memory and the
//! CLI points the same code at a file.

use std::io::{self, Write};
use std::time::Instant;

use thiserror::Error;

use crate::attention::{
    init_wersa_params, mha_forward, wersa_forward, AblationFlags, AttentionError, WersaConfig,
};
use crate::autograd::{grad_check, GradReport};
use crate::model::{
    make_toy_task, train, Backend, EncoderConfig, LogRecord, ModelError, ToySample,
};
use crate::rng::RngState;
use crate::spectral::{kernel_error_probe, probe_medians, KernelErrorRecord, NormMode, RInit};
use crate::tensor::{sample_gaussian, Tensor, TensorError};
use crate::wavelet::{padded_len, WaveletError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scaling fit needs >= 4 distinct lengths spanning >= 8x, got {distinct} spanning {span:.2}x")]
    InsufficientScalingData { distinct: usize, span: f64 },
    #[error("unknown mechanism {0:?} (expected wersa or standard)")]
    UnknownMechanism(String),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type HarnessResult<T> = Result<T, HarnessError>;

// ---------------------------------------------------------------------------
// FLOPS model

/// One fused multiply-add counts as 2 floating point operations, everywhere.
pub const FLOPS_PER_MAC: f64 = 2.0;

/// Closed-form operation counts for a single attention call on one sequence
/// (batch 1). `features` is the per-head feature count, matching how the
/// random matrices are actually shaped.
#[derive(Debug, Clone, Copy)]
pub struct FlopsModel {
    pub d_model: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub levels: usize,
    pub features: usize,
}

impl FlopsModel {
    pub fn new(d_model: usize, heads: usize, levels: usize, features: usize) -> FlopsModel {
        assert!(heads > 0 && d_model % heads == 0);
        FlopsModel {
            d_model,
            heads,
            head_dim: d_model / heads,
            levels,
            features,
        }
    }

    pub fn for_attention(cfg: &WersaConfig) -> FlopsModel {
        FlopsModel::new(cfg.d_model, cfg.heads, cfg.levels, cfg.features)
    }

    /// Q, K, V input projections plus the output projection.
    pub fn projections(&self, n: usize) -> f64 {
        let inner = (self.heads * self.head_dim) as f64;
        let (n, d) = (n as f64, self.d_model as f64);
        FLOPS_PER_MAC * n * d * inner * 3.0 + FLOPS_PER_MAC * n * inner * d
    }

    /// Forward and inverse transform for both Q and K streams.
    pub fn wavelet(&self, n: usize) -> f64 {
        4.0 * n as f64 * self.d_model as f64 * self.levels as f64 * 2.0
    }

    /// The per-sequence gating network; independent of n.
    pub fn filter_net(&self) -> f64 {
        let inner = (self.heads * self.head_dim) as f64;
        FLOPS_PER_MAC * inner * (self.levels as f64 + 1.0)
    }

    /// Feature-space projection of Q and K across all heads.
    pub fn random_projection(&self, n: usize) -> f64 {
        FLOPS_PER_MAC
            * n as f64
            * self.head_dim as f64
            * self.features as f64
            * 2.0
            * self.heads as f64
    }

    /// The two linear-attention contractions (KV and its product with Q).
    pub fn linear_attention(&self, n: usize) -> f64 {
        FLOPS_PER_MAC
            * n as f64
            * self.features as f64
            * self.head_dim as f64
            * 2.0
            * self.heads as f64
    }

    /// Affine in n for fixed dimensions; the affinity test pins that down.
    pub fn wersa_total(&self, n: usize) -> f64 {
        self.projections(n)
            + self.wavelet(n)
            + self.filter_net()
            + self.random_projection(n)
            + self.linear_attention(n)
    }

    /// Projections plus the two quadratic contractions (scores and their
    /// product with V).
    pub fn standard_total(&self, n: usize) -> f64 {
        let quad = FLOPS_PER_MAC
            * (n as f64)
            * (n as f64)
            * self.head_dim as f64
            * 2.0
            * self.heads as f64;
        self.projections(n) + quad
    }

    /// One ReLU feed-forward block (two dense layers).
    pub fn ffn(&self, n: usize, ffn_dim: usize) -> f64 {
        FLOPS_PER_MAC * n as f64 * self.d_model as f64 * ffn_dim as f64 * 2.0
    }

    /// Peak live f64 bytes for one WERSA forward at batch 1: inputs and
    /// projections, padded coefficient buffers, feature maps, and the
    /// factored contractions. Analytic inventory, not allocator output.
    pub fn wersa_mem_bytes(&self, n: usize) -> u64 {
        let padded = padded_len(n, self.levels).unwrap_or(n);
        let (h, dh, m, d) = (self.heads, self.head_dim, self.features, self.d_model);
        let elems = 4 * n * d               // x plus q, k, v projections
            + 3 * h * n * dh                // head-split views
            + 2 * h * padded * dh           // packed coefficients for q, k
            + 2 * h * n * dh                // filtered reconstructions
            + 2 * h * n * m                 // feature maps
            + h * m * dh                    // kv contraction
            + h * n * dh                    // numerator
            + h * n                         // denominator column
            + n * d;                        // merged output
        (elems * 8) as u64
    }

    /// Same inventory for the quadratic path; the score matrix dominates.
    pub fn standard_mem_bytes(&self, n: usize) -> u64 {
        let (h, dh, d) = (self.heads, self.head_dim, self.d_model);
        let elems = 4 * n * d + 3 * h * n * dh + h * n * n + h * n * dh + n * d;
        (elems * 8) as u64
    }
}

/// The large-config preset: 4 layers, d=256, 8 heads, ffn 1024, a 1024-way
/// feature budget split across the heads, L=2. Reports whole-encoder counts
/// (attention plus feed-forward, all layers) for both mechanisms.
#[derive(Debug, Clone, Copy)]
pub struct PresetReport {
    pub n: usize,
    pub wersa_flops: f64,
    pub standard_flops: f64,
    pub ratio: f64,
}

pub fn arxiv_like_flops(n: usize) -> PresetReport {
    let layers = 4.0;
    let ffn_dim = 1024;
    let model = FlopsModel::new(256, 8, 2, 1024 / 8);
    let ffn = model.ffn(n, ffn_dim);
    let wersa_flops = layers * (model.wersa_total(n) + ffn);
    let standard_flops = layers * (model.standard_total(n) + ffn);
    PresetReport {
        n,
        wersa_flops,
        standard_flops,
        ratio: standard_flops / wersa_flops,
    }
}

// ---------------------------------------------------------------------------
// Timing sweeps

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    Wersa,
    Standard,
}

impl Mechanism {
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Wersa => "wersa",
            Mechanism::Standard => "standard",
        }
    }

    pub fn from_name(s: &str) -> HarnessResult<Mechanism> {
        match s {
            "wersa" => Ok(Mechanism::Wersa),
            "standard" => Ok(Mechanism::Standard),
            other => Err(HarnessError::UnknownMechanism(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub mechanism: String,
    pub n: usize,
    pub reps: usize,
    pub median_seconds: f64,
    pub flops_est: u64,
    pub mem_bytes_est: u64,
}

/// Attention shape used for timing. Single head and a small width keep the
/// quadratic baseline inside memory at the longest length.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub d_model: usize,
    pub heads: usize,
    pub levels: usize,
    pub features: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> BenchConfig {
        BenchConfig {
            d_model: 16,
            heads: 1,
            levels: 2,
            features: 64,
            seed: 7,
        }
    }
}

fn median_of(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let k = xs.len();
    if k % 2 == 1 {
        xs[k / 2]
    } else {
        0.5 * (xs[k / 2 - 1] + xs[k / 2])
    }
}

/// Times single-threaded forwards. Parameter and input setup happen before
/// the measured region; at least 2 warmup runs are discarded and the median
/// of at least 5 further runs is recorded.
pub fn run_bench(
    cfg: &BenchConfig,
    mechanisms: &[Mechanism],
    lengths: &[usize],
    reps: usize,
    warmups: usize,
) -> HarnessResult<Vec<BenchRecord>> {
    let reps = reps.max(5);
    let warmups = warmups.max(2);
    let mut ns: Vec<usize> = lengths.to_vec();
    ns.sort_unstable();
    ns.dedup();

    let attn_cfg = WersaConfig {
        levels: cfg.levels,
        features: cfg.features,
        seed: cfg.seed,
        ..WersaConfig::new(cfg.d_model, cfg.heads)
    };
    let flops = FlopsModel::for_attention(&attn_cfg);
    let params = init_wersa_params(&attn_cfg)?;

    let mut records = Vec::new();
    for &mech in mechanisms {
        for &n in &ns {
            let mut rng = RngState::new(cfg.seed ^ n as u64);
            let x = sample_gaussian(&mut rng, &[1, n, cfg.d_model]);
            let run = |x: &Tensor| -> HarnessResult<Tensor> {
                Ok(match mech {
                    Mechanism::Wersa => wersa_forward(&attn_cfg, &params, x, x, x, None, false)?,
                    Mechanism::Standard => mha_forward(&attn_cfg, &params, x, x, x)?,
                })
            };
            for _ in 0..warmups {
                run(&x)?;
            }
            let mut times = Vec::with_capacity(reps);
            for _ in 0..reps {
                let start = Instant::now();
                let out = run(&x)?;
                times.push(start.elapsed().as_secs_f64());
                assert!(out.data()[0].is_finite());
            }
            let (flops_est, mem_bytes_est) = match mech {
                Mechanism::Wersa => (flops.wersa_total(n), flops.wersa_mem_bytes(n)),
                Mechanism::Standard => (flops.standard_total(n), flops.standard_mem_bytes(n)),
            };
            records.push(BenchRecord {
                mechanism: mech.name().to_string(),
                n,
                reps,
                median_seconds: median_of(times),
                flops_est: flops_est.round() as u64,
                mem_bytes_est,
            });
        }
    }
    Ok(records)
}

/// Least-squares slope of log(time) against log(n). Requires at least 4
/// distinct lengths whose extremes span a factor of 8.
pub fn fit_scaling_slope(points: &[(usize, f64)]) -> HarnessResult<f64> {
    let mut ns: Vec<usize> = points.iter().map(|&(n, _)| n).collect();
    ns.sort_unstable();
    ns.dedup();
    let span = if ns.is_empty() {
        0.0
    } else {
        ns[ns.len() - 1] as f64 / ns[0] as f64
    };
    if ns.len() < 4 || span < 8.0 {
        return Err(HarnessError::InsufficientScalingData {
            distinct: ns.len(),
            span,
        });
    }
    let logs: Vec<(f64, f64)> = points
        .iter()
        .map(|&(n, t)| ((n as f64).ln(), t.ln()))
        .collect();
    let k = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in logs {
        num += (x - mean_x) * (y - mean_y);
        den += (x - mean_x) * (x - mean_x);
    }
    Ok(num / den)
}

pub fn slope_points(records: &[BenchRecord], mechanism: Mechanism) -> Vec<(usize, f64)> {
    records
        .iter()
        .filter(|r| r.mechanism == mechanism.name())
        .map(|r| (r.n, r.median_seconds))
        .collect()
}

// ---------------------------------------------------------------------------
// Experiment drivers

/// Approximation error of the factored kernel against exact attention on a
/// no-wavelet instance; rows per (m, seed) plus a per-m median row.
pub fn approx_error_experiment(
    n: usize,
    d_h: usize,
    m_values: &[usize],
    num_seeds: u64,
    data_seed: u64,
) -> HarnessResult<Vec<KernelErrorRecord>> {
    let mut rng = RngState::new(data_seed);
    let q = sample_gaussian(&mut rng, &[1, 1, n, d_h]);
    let k = sample_gaussian(&mut rng, &[1, 1, n, d_h]);
    let v = sample_gaussian(&mut rng, &[1, 1, n, d_h]);
    let seeds: Vec<u64> = (0..num_seeds).collect();
    Ok(kernel_error_probe(&q, &k, &v, m_values, &seeds, RInit::Gaussian)?)
}

pub fn gradcheck_scenarios() -> Vec<(&'static str, NormMode, &'static str, AblationFlags)> {
    let mut out = Vec::new();
    for (norm_name, norm) in [
        ("denominator", NormMode::Denominator),
        ("layernorm", NormMode::Layernorm),
    ] {
        for (abl_name, ablation) in [
            ("none", AblationFlags::default()),
            (
                "no_wavelet",
                AblationFlags {
                    no_wavelet: true,
                    ..AblationFlags::default()
                },
            ),
            (
                "no_adaptive_filters",
                AblationFlags {
                    no_adaptive_filters: true,
                    ..AblationFlags::default()
                },
            ),
            (
                "no_scale_weights",
                AblationFlags {
                    no_scale_weights: true,
                    ..AblationFlags::default()
                },
            ),
            (
                "no_random_features",
                AblationFlags {
                    no_random_features: true,
                    ..AblationFlags::default()
                },
            ),
        ] {
            out.push((norm_name, norm, abl_name, ablation));
        }
    }
    out
}

/// Central-difference audit of every trainable group across the full
/// norm-mode and ablation grid. Row names are scenario-qualified.
pub fn gradcheck_experiment(seed: u64) -> HarnessResult<Vec<GradReport>> {
    let mut reports = Vec::new();
    for (norm_name, norm, abl_name, ablation) in gradcheck_scenarios() {
        let cfg = WersaConfig {
            levels: 2,
            features: 16,
            norm_mode: norm,
            ablation,
            seed,
            ..WersaConfig::new(8, 2)
        };
        let params = init_wersa_params(&cfg)?;
        for report in grad_check(&cfg, &params, seed ^ 0xabcd)? {
            reports.push(GradReport {
                param: format!("{norm_name}/{abl_name}/{}", report.param),
                ..report
            });
        }
    }
    Ok(reports)
}

/// Marker-task splits derived from one seed; validation draws come from an
/// offset stream so they never overlap the training draws.
pub fn toy_datasets(
    cfg: &EncoderConfig,
    train_size: usize,
    val_size: usize,
    data_seed: u64,
) -> (Vec<ToySample>, Vec<ToySample>) {
    let n = cfg.max_len;
    let train_set = make_toy_task(data_seed, n, train_size, cfg.num_classes, cfg.vocab_size);
    let val_set = make_toy_task(
        data_seed.wrapping_add(1),
        n,
        val_size,
        cfg.num_classes,
        cfg.vocab_size,
    );
    (train_set, val_set)
}

/// The trainability experiment: 2048/128 split on sequence length 128.
/// The training set is sized so that memorizing filler patterns is a worse
/// deal than locating the marker.
pub const TOY_TRAIN_SIZE: usize = 2048;
pub const TOY_VAL_SIZE: usize = 128;

pub fn train_toy_experiment(cfg: &EncoderConfig, data_seed: u64) -> HarnessResult<Vec<LogRecord>> {
    let (train_set, val_set) = toy_datasets(cfg, TOY_TRAIN_SIZE, TOY_VAL_SIZE, data_seed);
    let (log, _) = train(cfg, &train_set, &val_set)?;
    Ok(log)
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub variant: String,
    pub records: Vec<LogRecord>,
    pub final_val_accuracy: f64,
}

pub fn ablation_variants() -> Vec<(&'static str, AblationFlags)> {
    vec![
        ("full", AblationFlags::default()),
        (
            "no_wavelet",
            AblationFlags {
                no_wavelet: true,
                ..AblationFlags::default()
            },
        ),
        (
            "no_adaptive_filters",
            AblationFlags {
                no_adaptive_filters: true,
                ..AblationFlags::default()
            },
        ),
        (
            "no_scale_weights",
            AblationFlags {
                no_scale_weights: true,
                ..AblationFlags::default()
            },
        ),
        (
            "no_random_features",
            AblationFlags {
                no_random_features: true,
                ..AblationFlags::default()
            },
        ),
    ]
}

/// A short-sequence task on which every variant has time to converge; the
/// exact-softmax variant is the slowest starter and needs roughly twelve
/// epochs, so the budget leaves headroom past that.
pub fn ablation_toy_config() -> EncoderConfig {
    EncoderConfig {
        layers: 1,
        d_model: 16,
        heads: 2,
        ffn_dim: 32,
        vocab_size: 16,
        max_len: 64,
        num_classes: 2,
        backend: Backend::Wersa,
        levels: 2,
        features: 32,
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

/// Data split used by the ablation grid, mirroring the trainability run's
/// sizing logic at the shorter sequence length.
pub fn ablation_toy_datasets(cfg: &EncoderConfig) -> (Vec<ToySample>, Vec<ToySample>) {
    toy_datasets(cfg, 1024, 128, cfg.seed.wrapping_add(17))
}

/// Trains every variant on identical data splits.
pub fn ablation_experiment(
    base: &EncoderConfig,
    train_set: &[ToySample],
    val_set: &[ToySample],
) -> HarnessResult<Vec<AblationOutcome>> {
    let mut outcomes = Vec::new();
    for (name, ablation) in ablation_variants() {
        let mut cfg = base.clone();
        cfg.ablation = ablation;
        let (records, _) = train(&cfg, train_set, val_set)?;
        let final_val_accuracy = records
            .iter()
            .rev()
            .find(|r| matches!(r.split, crate::model::Split::Val))
            .map(|r| r.accuracy)
            .expect("at least one epoch");
        outcomes.push(AblationOutcome {
            variant: name.to_string(),
            records,
            final_val_accuracy,
        });
    }
    Ok(outcomes)
}

// ---------------------------------------------------------------------------
// CSV emitters

pub fn write_bench_csv(w: &mut impl Write, records: &[BenchRecord]) -> io::Result<()> {
    writeln!(w, "mechanism,n,reps,median_seconds,flops_est,mem_bytes_est")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{:.9},{},{}",
            r.mechanism, r.n, r.reps, r.median_seconds, r.flops_est, r.mem_bytes_est
        )?;
    }
    Ok(())
}

pub fn write_error_csv(w: &mut impl Write, records: &[KernelErrorRecord]) -> io::Result<()> {
    writeln!(w, "m,seed,frob_error")?;
    for r in records {
        writeln!(w, "{},{},{}", r.m, r.seed, r.frob_error)?;
    }
    for (m, med) in probe_medians(records) {
        writeln!(w, "{m},median,{med}")?;
    }
    Ok(())
}

pub fn write_gradcheck_csv(w: &mut impl Write, reports: &[GradReport]) -> io::Result<()> {
    writeln!(w, "param,max_rel_err,max_abs_err,h")?;
    for r in reports {
        writeln!(w, "{},{},{},{}", r.param, r.max_rel_err, r.max_abs_err, r.h)?;
    }
    Ok(())
}

pub fn write_train_csv(w: &mut impl Write, records: &[LogRecord]) -> io::Result<()> {
    writeln!(w, "epoch,split,loss,accuracy")?;
    for r in records {
        writeln!(w, "{},{},{},{}", r.epoch, r.split, r.loss, r.accuracy)?;
    }
    Ok(())
}

pub fn write_ablation_csv(w: &mut impl Write, outcomes: &[AblationOutcome]) -> io::Result<()> {
    writeln!(w, "variant,epoch,split,loss,accuracy")?;
    for o in outcomes {
        for r in &o.records {
            writeln!(
                w,
                "{},{},{},{},{}",
                o.variant, r.epoch, r.split, r.loss, r.accuracy
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Split;

    #[test]
    fn slope_recovers_exact_power_laws() {
        let linear: Vec<(usize, f64)> =
            [1024, 2048, 4096, 8192].iter().map(|&n| (n, 3e-7 * n as f64)).collect();
        assert!((fit_scaling_slope(&linear).unwrap() - 1.0).abs() < 1e-6);
        let quadratic: Vec<(usize, f64)> = [1024, 2048, 4096, 8192]
            .iter()
            .map(|&n| (n, 1e-10 * (n as f64) * (n as f64)))
            .collect();
        assert!((fit_scaling_slope(&quadratic).unwrap() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn slope_rejects_thin_data() {
        let three: Vec<(usize, f64)> = vec![(1024, 1.0), (2048, 2.0), (8192, 8.0)];
        assert!(matches!(
            fit_scaling_slope(&three),
            Err(HarnessError::InsufficientScalingData { distinct: 3, .. })
        ));
        let narrow: Vec<(usize, f64)> =
            vec![(1024, 1.0), (1100, 1.1), (1200, 1.2), (1300, 1.3)];
        assert!(fit_scaling_slope(&narrow).is_err());
    }

    #[test]
    fn flops_model_is_affine_in_n() {
        let model = FlopsModel::new(16, 1, 2, 64);
        let expect = model.wersa_total(2048) - 2.0 * model.wersa_total(1024);
        for n in [2048usize, 4096, 8192] {
            let diff = model.wersa_total(2 * n) - 2.0 * model.wersa_total(n);
            let rel = (diff - expect).abs() / expect.abs().max(1.0);
            assert!(rel < 1e-6, "affinity residual {rel} at n={n}");
        }
    }

    #[test]
    fn standard_flops_grow_quadratically() {
        let model = FlopsModel::new(16, 1, 2, 64);
        let ratio = model.standard_total(16384) / model.standard_total(8192);
        assert!(ratio > 3.5, "ratio {ratio}");
    }

    #[test]
    fn large_preset_puts_the_quadratic_cost_well_ahead() {
        let report = arxiv_like_flops(4096);
        assert!(report.ratio > 2.0, "ratio {}", report.ratio);
        // Whole-encoder counts land in the tens of gigaflops.
        assert!(report.standard_flops > 5e10 && report.standard_flops < 5e11);
        assert!(report.wersa_flops < report.standard_flops);
    }

    #[test]
    fn memory_estimates_separate_the_mechanisms() {
        let model = FlopsModel::new(16, 1, 2, 64);
        let n = 16384;
        assert!(model.standard_mem_bytes(n) > 20 * model.wersa_mem_bytes(n));
        // The linear path's estimate grows close to linearly.
        let grow = model.wersa_mem_bytes(2 * n) as f64 / model.wersa_mem_bytes(n) as f64;
        assert!(grow < 2.5, "growth {grow}");
    }

    #[test]
    fn bench_rows_are_deterministic_apart_from_wall_time() {
        let cfg = BenchConfig::default();
        let mechs = [Mechanism::Wersa, Mechanism::Standard];
        let ns = [32, 64, 128, 256];
        let a = run_bench(&cfg, &mechs, &ns, 5, 2).unwrap();
        let b = run_bench(&cfg, &mechs, &ns, 5, 2).unwrap();
        assert_eq!(a.len(), b.len());
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(
                (&ra.mechanism, ra.n, ra.reps, ra.flops_est, ra.mem_bytes_est),
                (&rb.mechanism, rb.n, rb.reps, rb.flops_est, rb.mem_bytes_est)
            );
            assert!(ra.median_seconds > 0.0);
        }
        // Lengths are sorted within each mechanism's sweep.
        for rows in a.chunks(ns.len()) {
            for pair in rows.windows(2) {
                assert!(pair[0].n < pair[1].n);
            }
        }
    }

    #[test]
    fn bench_csv_header_is_pinned() {
        let mut buf = Vec::new();
        write_bench_csv(&mut buf, &[]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "mechanism,n,reps,median_seconds,flops_est,mem_bytes_est\n"
        );
    }

    #[test]
    fn error_csv_lists_rows_then_medians_and_is_byte_stable() {
        let records = approx_error_experiment(16, 8, &[8, 32], 3, 5).unwrap();
        let mut a = Vec::new();
        write_error_csv(&mut a, &records).unwrap();
        let records2 = approx_error_experiment(16, 8, &[8, 32], 3, 5).unwrap();
        let mut b = Vec::new();
        write_error_csv(&mut b, &records2).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "m,seed,frob_error");
        assert_eq!(lines.len(), 1 + 6 + 2);
        assert!(lines[7].starts_with("8,median,"));
        assert!(lines[8].starts_with("32,median,"));
    }

    #[test]
    fn gradcheck_csv_rows_carry_scenario_names() {
        let report = GradReport {
            param: "denominator/none/w_q".to_string(),
            max_rel_err: 1e-7,
            max_abs_err: 1e-9,
            h: 1e-5,
        };
        let mut buf = Vec::new();
        write_gradcheck_csv(&mut buf, &[report]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "param,max_rel_err,max_abs_err,h"
        );
        assert!(text.lines().nth(1).unwrap().starts_with("denominator/none/w_q,"));
    }

    #[test]
    fn train_csv_schema_is_pinned() {
        let records = vec![
            LogRecord {
                epoch: 1,
                split: Split::Train,
                loss: 0.5,
                accuracy: 0.75,
            },
            LogRecord {
                epoch: 1,
                split: Split::Val,
                loss: 0.625,
                accuracy: 0.5,
            },
        ];
        let mut buf = Vec::new();
        write_train_csv(&mut buf, &records).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,split,loss,accuracy\n1,train,0.5,0.75\n1,val,0.625,0.5\n"
        );
    }

    #[test]
    fn ablation_csv_prefixes_each_variant() {
        let outcome = AblationOutcome {
            variant: "full".to_string(),
            records: vec![LogRecord {
                epoch: 1,
                split: Split::Val,
                loss: 0.25,
                accuracy: 1.0,
            }],
            final_val_accuracy: 1.0,
        };
        let mut buf = Vec::new();
        write_ablation_csv(&mut buf, &[outcome]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "variant,epoch,split,loss,accuracy\nfull,1,val,0.25,1\n"
        );
    }

    #[test]
    fn mechanism_names_round_trip() {
        assert_eq!(Mechanism::from_name("wersa").unwrap(), Mechanism::Wersa);
        assert_eq!(
            Mechanism::from_name("standard").unwrap(),
            Mechanism::Standard
        );
        assert!(Mechanism::from_name("flash").is_err());
    }
}
