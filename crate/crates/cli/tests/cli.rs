//! Exit-code and output contracts for the binary, driven end to end.

use std::fs;
use std::process::Command;

fn wersa() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wersa"))
}

#[test]
fn no_arguments_is_a_usage_error() {
    let out = wersa().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = wersa()
        .args(["bench", "--definitely-not-a-flag", "--out", "/tmp/x.csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--definitely-not-a-flag") || stderr.to_lowercase().contains("usage"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = wersa().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unwritable_output_path_fails_with_code_one() {
    let out = wersa()
        .args([
            "approx-error",
            "--m", "8",
            "--seeds", "1",
            "--n", "8",
            "--dh", "4",
            "--out", "/nonexistent-dir/x.csv",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn approx_error_writes_rows_and_median_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("err.csv");
    let out = wersa()
        .args([
            "approx-error",
            "--m", "8,32",
            "--seeds", "3",
            "--n", "16",
            "--dh", "8",
            "--out",
        ])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "m,seed,frob_error");
    assert_eq!(lines.len(), 1 + 6 + 2);
    assert!(lines.iter().any(|l| l.starts_with("8,median,")));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("approx-error:"));
}

#[test]
fn bench_reports_rows_and_sorted_lengths() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bench.csv");
    let out = wersa()
        .args(["bench", "--mech", "wersa", "--n", "256,64,128", "--reps", "5", "--out"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "mechanism,n,reps,median_seconds,flops_est,mem_bytes_est");
    let ns: Vec<usize> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(ns, vec![64, 128, 256]);
}

#[test]
fn flops_preset_reports_the_gap() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flops.csv");
    let out = wersa()
        .args(["flops", "--config", "arxiv-like", "--out"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("ratio"));
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("mechanism,n,flops_est\n"));
    let mut values = std::collections::HashMap::new();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        values.insert(cols[0].to_string(), cols[2].parse::<u64>().unwrap());
    }
    assert!(values["standard"] > 2 * values["wersa"]);
}

#[test]
fn train_toy_honors_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(
        &cfg_path,
        r#"{
            "layers": 1, "d_model": 8, "heads": 2, "ffn_dim": 8,
            "vocab_size": 16, "max_len": 32, "num_classes": 2,
            "backend": "wersa", "levels": 2, "features": 8,
            "norm_mode": "denominator", "r_init": "gaussian",
            "share_r_across_heads": false,
            "ablation": {},
            "lr": 0.001, "batch_size": 8, "epochs": 1, "seed": 3
        }"#,
    )
    .unwrap();
    let out_path = dir.path().join("train.csv");
    let out = wersa()
        .args(["train-toy", "--train-size", "16", "--val-size", "8", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&out_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,split,loss,accuracy");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,train,"));
    assert!(lines[2].starts_with("1,val,"));
}

#[test]
fn ablate_writes_all_variants() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ablate.csv");
    let out = wersa()
        .args(["ablate", "--epochs", "1", "--out"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("variant,epoch,split,loss,accuracy\n"));
    for variant in [
        "full",
        "no_wavelet",
        "no_adaptive_filters",
        "no_scale_weights",
        "no_random_features",
    ] {
        assert!(
            text.lines().any(|l| l.starts_with(&format!("{variant},"))),
            "missing {variant}"
        );
    }
}
