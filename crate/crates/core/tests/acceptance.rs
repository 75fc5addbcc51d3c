//! End-to-end acceptance checks, one test per shipped guarantee. Each test
//! prints a `pass` line on success (visible with `--nocapture`); the
//! assertions themselves carry the tolerances.
//!
//! Budgeted tests assert their own wall-clock limits, so a regression in
//! asymptotics or constant factors fails loudly rather than just slowly.

use std::time::Instant;

use wersa_core::attention::{
    init_wersa_params, mha_forward, wersa_forward, AblationFlags, WersaConfig,
};
use wersa_core::harness::{
    ablation_experiment, ablation_toy_config, ablation_toy_datasets, approx_error_experiment,
    fit_scaling_slope, gradcheck_experiment, run_bench, slope_points, toy_datasets, write_ablation_csv,
    write_bench_csv, write_error_csv, write_gradcheck_csv, write_train_csv, BenchConfig,
    FlopsModel, Mechanism,
};
use wersa_core::model::{train, EncoderConfig, Split};
use wersa_core::spectral::{probe_medians, softmax_attention, NormMode};
use wersa_core::tensor::{sample_gaussian, AllocProbe, Tensor};
use wersa_core::wavelet::{dwt_packed, idwt_packed, scale_packed_blocks};
use wersa_core::RngState;

#[test]
fn acceptance_01_haar_roundtrip_and_energy() {
    let start = Instant::now();
    let mut rng = RngState::new(101);
    for case in 0..200 {
        let n = 1 + rng.next_below(64);
        let d = if rng.next_below(2) == 0 { 1 } else { 4 };
        let levels = 1 + rng.next_below(3);
        let x = sample_gaussian(&mut rng, &[1, 1, n, d]);
        let packed = dwt_packed(&x, levels).unwrap();
        let back = idwt_packed(&packed, levels, n).unwrap();
        assert!(
            back.max_abs_diff(&x) < 1e-9,
            "case {case}: roundtrip drift at n={n} d={d} L={levels}"
        );
        let ex = x.frobenius_norm().powi(2);
        let ep = packed.frobenius_norm().powi(2);
        assert!(
            (ex - ep).abs() <= 1e-9 * ex.max(1e-300),
            "case {case}: energy {ex} vs {ep}"
        );
    }
    assert!(start.elapsed().as_secs_f64() < 5.0, "budget exceeded");
    println!("acceptance 01 haar roundtrip and energy: pass");
}

#[test]
fn acceptance_02_exact_path_matches_softmax_oracle() {
    let mut rng = RngState::new(202);
    for case in 0..50 {
        let n = 1 + rng.next_below(16);
        let cfg = WersaConfig {
            ablation: AblationFlags {
                no_wavelet: true,
                no_random_features: true,
                ..AblationFlags::default()
            },
            seed: rng.next_u64(),
            ..WersaConfig::new(8, 2)
        };
        let params = init_wersa_params(&cfg).unwrap();
        let x = sample_gaussian(&mut rng, &[2, n, cfg.d_model]);
        let ours = wersa_forward(&cfg, &params, &x, &x, &x, None, false).unwrap();
        let oracle = mha_forward(&cfg, &params, &x, &x, &x).unwrap();
        let diff = ours.max_abs_diff(&oracle);
        assert!(diff < 1e-10, "case {case}: n={n} diff {diff}");
    }
    println!("acceptance 02 exact path matches softmax oracle: pass");
}

#[test]
fn acceptance_03_quadratic_ablation_uses_filtered_inputs() {
    let cfg = WersaConfig {
        levels: 2,
        features: 16,
        ablation: AblationFlags {
            no_random_features: true,
            ..AblationFlags::default()
        },
        seed: 303,
        ..WersaConfig::new(8, 2)
    };
    let params = init_wersa_params(&cfg).unwrap();
    let (b, n, h) = (2usize, 12usize, cfg.heads);
    let d_h = cfg.head_dim();
    let mut rng = RngState::new(304);
    let x = sample_gaussian(&mut rng, &[b, n, cfg.d_model]);
    let ours = wersa_forward(&cfg, &params, &x, &x, &x, None, false).unwrap();

    // Same computation spelled out with the building blocks.
    let split = |w: &Tensor| {
        x.matmul_batched(w)
            .unwrap()
            .reshaped(&[b, n, h, d_h])
            .unwrap()
            .swap_axes_1_2()
            .unwrap()
    };
    let qh = split(&params.w_q);
    let kh = split(&params.w_k);
    let vh = split(&params.w_v);
    let pooled = qh
        .mean_axis(2)
        .unwrap()
        .reshaped(&[b, h * d_h])
        .unwrap();
    let filters = pooled
        .matmul_batched(&params.w_filter)
        .unwrap()
        .add(&params.b_filter)
        .unwrap()
        .sigmoid();
    let gate = filters.mul(&params.scale_weights).unwrap();
    let filt = |t: &Tensor| {
        let packed = dwt_packed(t, cfg.levels).unwrap();
        let gated = scale_packed_blocks(&packed, cfg.levels, &gate).unwrap();
        idwt_packed(&gated, cfg.levels, n).unwrap()
    };
    let ctx = softmax_attention(&filt(&qh), &filt(&kh), &vh, 1.0 / (d_h as f64).sqrt()).unwrap();
    let want = ctx
        .swap_axes_1_2()
        .unwrap()
        .reshaped(&[b, n, h * d_h])
        .unwrap()
        .matmul_batched(&params.w_out)
        .unwrap();
    let diff = ours.max_abs_diff(&want);
    assert!(diff < 1e-10, "diff {diff}");
    println!("acceptance 03 quadratic ablation uses filtered inputs: pass");
}

#[test]
fn acceptance_04_feature_count_tightens_the_approximation() {
    let start = Instant::now();
    let records = approx_error_experiment(32, 16, &[64, 256, 1024], 10, 5).unwrap();
    let medians = probe_medians(&records);
    assert_eq!(medians.len(), 3);
    assert!(
        medians[0].1 > medians[1].1 && medians[1].1 > medians[2].1,
        "medians not strictly decreasing: {medians:?}"
    );
    assert!(start.elapsed().as_secs_f64() < 30.0, "budget exceeded");
    println!(
        "acceptance 04 feature count tightens the approximation: pass ({:.4} > {:.4} > {:.4})",
        medians[0].1, medians[1].1, medians[2].1
    );
}

#[test]
fn acceptance_05_gradients_match_central_differences_everywhere() {
    let start = Instant::now();
    let reports = gradcheck_experiment(3).unwrap();
    // Both norm modes crossed with the stock setup and all four ablations.
    for scenario in [
        "denominator/none",
        "denominator/no_wavelet",
        "denominator/no_adaptive_filters",
        "denominator/no_scale_weights",
        "denominator/no_random_features",
        "layernorm/none",
        "layernorm/no_wavelet",
        "layernorm/no_adaptive_filters",
        "layernorm/no_scale_weights",
        "layernorm/no_random_features",
    ] {
        assert!(
            reports.iter().any(|r| r.param.starts_with(scenario)),
            "missing scenario {scenario}"
        );
    }
    let mut worst = 0.0_f64;
    for r in &reports {
        assert!(
            r.max_rel_err < 1e-3,
            "{}: rel err {}",
            r.param,
            r.max_rel_err
        );
        worst = worst.max(r.max_rel_err);
    }
    assert!(start.elapsed().as_secs_f64() < 60.0, "budget exceeded");
    println!(
        "acceptance 05 gradients match central differences everywhere: pass (worst {worst:.2e})"
    );
}

#[test]
fn acceptance_06_wall_time_scales_linearly_only_for_wersa() {
    let start = Instant::now();
    let cfg = BenchConfig::default();
    let ns = [1024usize, 2048, 4096, 8192, 16384];
    let records = run_bench(
        &cfg,
        &[Mechanism::Wersa, Mechanism::Standard],
        &ns,
        5,
        2,
    )
    .unwrap();
    let wersa_slope = fit_scaling_slope(&slope_points(&records, Mechanism::Wersa)).unwrap();
    let standard_slope = fit_scaling_slope(&slope_points(&records, Mechanism::Standard)).unwrap();
    assert!(
        (0.8..=1.3).contains(&wersa_slope),
        "wersa slope {wersa_slope}"
    );
    assert!(standard_slope >= 1.7, "standard slope {standard_slope}");

    let model = FlopsModel::new(cfg.d_model, cfg.heads, cfg.levels, cfg.features);
    let expect = model.wersa_total(2048) - 2.0 * model.wersa_total(1024);
    for n in [2048usize, 4096, 8192] {
        let diff = model.wersa_total(2 * n) - 2.0 * model.wersa_total(n);
        let rel = (diff - expect).abs() / expect.abs().max(1.0);
        assert!(rel < 1e-6, "affinity residual {rel} at n={n}");
    }
    assert!(start.elapsed().as_secs_f64() < 300.0, "budget exceeded");
    println!(
        "acceptance 06 wall time scales linearly only for wersa: pass \
         (slopes {wersa_slope:.3} vs {standard_slope:.3})"
    );
}

#[test]
fn acceptance_07_no_quadratic_buffer_on_any_linear_path() {
    let n = 8192;
    let scenarios: Vec<(NormMode, AblationFlags)> = vec![
        (NormMode::Denominator, AblationFlags::default()),
        (NormMode::Layernorm, AblationFlags::default()),
        (
            NormMode::Denominator,
            AblationFlags {
                no_wavelet: true,
                ..AblationFlags::default()
            },
        ),
        (
            NormMode::Denominator,
            AblationFlags {
                no_adaptive_filters: true,
                ..AblationFlags::default()
            },
        ),
        (
            NormMode::Denominator,
            AblationFlags {
                no_scale_weights: true,
                ..AblationFlags::default()
            },
        ),
    ];
    for (norm_mode, ablation) in scenarios {
        let cfg = WersaConfig {
            levels: 2,
            features: 16,
            norm_mode,
            ablation,
            seed: 707,
            ..WersaConfig::new(16, 1)
        };
        let params = init_wersa_params(&cfg).unwrap();
        let mut rng = RngState::new(708);
        let x = sample_gaussian(&mut rng, &[1, n, cfg.d_model]);
        let probe = AllocProbe::start();
        let out = wersa_forward(&cfg, &params, &x, &x, &x, None, false).unwrap();
        let shapes = probe.finish();
        assert!(out.data()[0].is_finite());
        assert!(!shapes.is_empty());
        for shape in shapes {
            let big_axes = shape.iter().filter(|&&e| e >= n).count();
            assert!(
                big_axes < 2,
                "quadratic buffer {shape:?} under {norm_mode:?} {ablation:?}"
            );
        }
    }
    println!("acceptance 07 no quadratic buffer on any linear path: pass");
}

#[test]
fn acceptance_08_toy_task_is_learned_within_twenty_epochs() {
    let start = Instant::now();
    let cfg = EncoderConfig::toy_default();
    assert_eq!(cfg.max_len, 128);
    assert_eq!(cfg.epochs, 20);
    let (train_set, val_set) = toy_datasets(&cfg, 2048, 128, cfg.seed.wrapping_add(17));
    let (log, _) = train(&cfg, &train_set, &val_set).unwrap();
    let best_val = log
        .iter()
        .filter(|r| r.split == Split::Val)
        .map(|r| r.accuracy)
        .fold(0.0_f64, f64::max);
    assert!(best_val >= 0.90, "best val accuracy {best_val}");
    let train_loss = |epoch: usize| {
        log.iter()
            .find(|r| r.epoch == epoch && r.split == Split::Train)
            .map(|r| r.loss)
            .expect("epoch logged")
    };
    assert!(
        train_loss(5) < train_loss(1),
        "no early progress: {} vs {}",
        train_loss(5),
        train_loss(1)
    );
    assert!(start.elapsed().as_secs_f64() < 600.0, "budget exceeded");
    println!("acceptance 08 toy task is learned within twenty epochs: pass (val {best_val:.3})");
}

#[test]
fn acceptance_09_csv_outputs_are_byte_stable() {
    // Wall-time columns are exempt; every other byte must repeat exactly.
    let errors = |buf: &mut Vec<u8>| {
        let records = approx_error_experiment(16, 8, &[16, 64], 4, 9).unwrap();
        write_error_csv(buf, &records).unwrap();
    };
    let mut e1 = Vec::new();
    let mut e2 = Vec::new();
    errors(&mut e1);
    errors(&mut e2);
    assert_eq!(e1, e2, "approx-error CSV drifted");

    let grads = |buf: &mut Vec<u8>| {
        let reports = gradcheck_experiment(9).unwrap();
        write_gradcheck_csv(buf, &reports).unwrap();
    };
    let mut g1 = Vec::new();
    let mut g2 = Vec::new();
    grads(&mut g1);
    grads(&mut g2);
    assert_eq!(g1, g2, "gradcheck CSV drifted");

    let mut tiny = ablation_toy_config();
    tiny.max_len = 32;
    tiny.epochs = 1;
    let (train_set, val_set) = toy_datasets(&tiny, 32, 16, 11);
    let train_run = |buf: &mut Vec<u8>| {
        let (records, _) = train(&tiny, &train_set, &val_set).unwrap();
        write_train_csv(buf, &records).unwrap();
    };
    let mut t1 = Vec::new();
    let mut t2 = Vec::new();
    train_run(&mut t1);
    train_run(&mut t2);
    assert_eq!(t1, t2, "train CSV drifted");

    let ablate_run = |buf: &mut Vec<u8>| {
        let outcomes = ablation_experiment(&tiny, &train_set, &val_set).unwrap();
        write_ablation_csv(buf, &outcomes).unwrap();
    };
    let mut a1 = Vec::new();
    let mut a2 = Vec::new();
    ablate_run(&mut a1);
    ablate_run(&mut a2);
    assert_eq!(a1, a2, "ablate CSV drifted");

    // Bench rows: strip the wall-time column, compare the rest.
    let bench_rows = || {
        let records = run_bench(
            &BenchConfig::default(),
            &[Mechanism::Wersa],
            &[64, 128],
            5,
            2,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_bench_csv(&mut buf, &records).unwrap();
        String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|line| {
                let cols: Vec<&str> = line.split(',').collect();
                let mut kept = cols.clone();
                if cols.len() == 6 && cols[3] != "median_seconds" {
                    kept.remove(3);
                }
                kept.join(",")
            })
            .collect::<Vec<String>>()
    };
    assert_eq!(bench_rows(), bench_rows(), "bench CSV drifted");
    println!("acceptance 09 csv outputs are byte stable: pass");
}

#[test]
fn acceptance_10_full_model_holds_the_ablation_band() {
    let cfg = ablation_toy_config();
    let (train_set, val_set) = ablation_toy_datasets(&cfg);
    let outcomes = ablation_experiment(&cfg, &train_set, &val_set).unwrap();
    let full = outcomes
        .iter()
        .find(|o| o.variant == "full")
        .expect("full variant present");
    for o in &outcomes {
        assert!(
            full.final_val_accuracy >= o.final_val_accuracy - 0.02,
            "{} at {:.3} beats full at {:.3} by more than the band",
            o.variant,
            o.final_val_accuracy,
            full.final_val_accuracy
        );
    }
    println!(
        "acceptance 10 full model holds the ablation band: pass (full {:.3})",
        full.final_val_accuracy
    );
}
