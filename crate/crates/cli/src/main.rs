//! `wersa`: seeded experiment runner. Every subcommand writes a CSV and
//! prints a one-line summary; exit code 0 on success, 2 on bad arguments
//! (from the parser), 1 when an experiment fails.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use wersa_core::harness::{
    ablation_experiment, ablation_toy_config, ablation_toy_datasets, approx_error_experiment,
    arxiv_like_flops, fit_scaling_slope, gradcheck_experiment, run_bench, slope_points,
    toy_datasets, write_ablation_csv, write_bench_csv, write_error_csv, write_gradcheck_csv,
    write_train_csv, BenchConfig, Mechanism,
};
use wersa_core::model::{train, Backend, EncoderConfig, Split};
use wersa_core::spectral::probe_medians;

#[derive(Parser)]
#[command(name = "wersa", version, about = "attention scaling and training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time forward passes over a sweep of sequence lengths.
    Bench(BenchArgs),
    /// Frobenius error of the factored kernel against exact attention.
    ApproxError(ApproxArgs),
    /// Central-difference audit of every trainable gradient.
    Gradcheck(GradcheckArgs),
    /// Train every ablation variant on one marker task.
    Ablate(AblateArgs),
    /// Train the classifier on the marker task and log both splits.
    TrainToy(TrainArgs),
    /// Evaluate the analytical FLOPS model.
    Flops(FlopsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MechArg {
    Wersa,
    Standard,
}

impl From<MechArg> for Mechanism {
    fn from(m: MechArg) -> Mechanism {
        match m {
            MechArg::Wersa => Mechanism::Wersa,
            MechArg::Standard => Mechanism::Standard,
        }
    }
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated mechanisms to time.
    #[arg(long, value_delimiter = ',', default_values = ["wersa", "standard"])]
    mech: Vec<MechArg>,
    /// Comma-separated sequence lengths.
    #[arg(long, value_delimiter = ',', default_values_t = [1024usize, 2048, 4096, 8192, 16384])]
    n: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 2)]
    warmups: usize,
    #[arg(long, default_value_t = 16)]
    d_model: usize,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    #[arg(long, default_value_t = 2)]
    levels: usize,
    #[arg(long, default_value_t = 64)]
    features: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ApproxArgs {
    /// Comma-separated feature counts.
    #[arg(long, value_delimiter = ',', default_values_t = [64usize, 256, 1024])]
    m: Vec<usize>,
    /// Number of feature-matrix seeds per m.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 32)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    dh: usize,
    /// Seed for the attention instance itself.
    #[arg(long, default_value_t = 5)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 3)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON file with EncoderConfig fields; defaults are the toy setup.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    backend: Option<BackendArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 2048)]
    train_size: usize,
    #[arg(long, default_value_t = 128)]
    val_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Wersa,
    Standard,
}

#[derive(Clone, Copy, ValueEnum)]
enum FlopsPreset {
    /// 4 layers, d=256, 8 heads, ffn 1024, 1024 features over the heads.
    ArxivLike,
}

#[derive(Args)]
struct FlopsArgs {
    #[arg(long, value_enum, default_value_t = FlopsPreset::ArxivLike)]
    config: FlopsPreset,
    #[arg(long, default_value_t = 4096)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Bench(args) => {
            let cfg = BenchConfig {
                d_model: args.d_model,
                heads: args.heads,
                levels: args.levels,
                features: args.features,
                seed: args.seed,
            };
            let mechs: Vec<Mechanism> = args.mech.iter().map(|&m| m.into()).collect();
            let records = run_bench(&cfg, &mechs, &args.n, args.reps, args.warmups)?;
            let mut w = BufWriter::new(File::create(&args.out)?);
            write_bench_csv(&mut w, &records)?;
            let mut summary = format!("bench: {} rows -> {}", records.len(), args.out.display());
            for &mech in &mechs {
                if let Ok(slope) = fit_scaling_slope(&slope_points(&records, mech)) {
                    summary.push_str(&format!(", {} slope {:.3}", mech.name(), slope));
                }
            }
            println!("{summary}");
        }
        Command::ApproxError(args) => {
            let records =
                approx_error_experiment(args.n, args.dh, &args.m, args.seeds, args.seed)?;
            let mut w = BufWriter::new(File::create(&args.out)?);
            write_error_csv(&mut w, &records)?;
            let medians: Vec<String> = probe_medians(&records)
                .iter()
                .map(|(m, e)| format!("m={m}: {e:.4}"))
                .collect();
            println!(
                "approx-error: {} -> {}",
                medians.join(", "),
                args.out.display()
            );
        }
        Command::Gradcheck(args) => {
            let reports = gradcheck_experiment(args.seed)?;
            let mut w = BufWriter::new(File::create(&args.out)?);
            write_gradcheck_csv(&mut w, &reports)?;
            let worst = reports
                .iter()
                .map(|r| r.max_rel_err)
                .fold(0.0_f64, f64::max);
            println!(
                "gradcheck: {} groups, worst rel err {worst:.3e} -> {}",
                reports.len(),
                args.out.display()
            );
        }
        Command::Ablate(args) => {
            let mut cfg = ablation_toy_config();
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            if let Some(epochs) = args.epochs {
                cfg.epochs = epochs;
            }
            let (train_set, val_set) = ablation_toy_datasets(&cfg);
            let outcomes = ablation_experiment(&cfg, &train_set, &val_set)?;
            let mut w = BufWriter::new(File::create(&args.out)?);
            write_ablation_csv(&mut w, &outcomes)?;
            let parts: Vec<String> = outcomes
                .iter()
                .map(|o| format!("{} {:.3}", o.variant, o.final_val_accuracy))
                .collect();
            println!("ablate: {} -> {}", parts.join(", "), args.out.display());
        }
        Command::TrainToy(args) => {
            let mut cfg = match &args.config {
                Some(path) => serde_json::from_str::<EncoderConfig>(&fs::read_to_string(path)?)?,
                None => EncoderConfig::toy_default(),
            };
            if let Some(backend) = args.backend {
                cfg.backend = match backend {
                    BackendArg::Wersa => Backend::Wersa,
                    BackendArg::Standard => Backend::Standard,
                };
            }
            if let Some(epochs) = args.epochs {
                cfg.epochs = epochs;
            }
            if let Some(lr) = args.lr {
                cfg.lr = lr;
            }
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            let (train_set, val_set) =
                toy_datasets(&cfg, args.train_size, args.val_size, cfg.seed.wrapping_add(17));
            let (records, _) = train(&cfg, &train_set, &val_set)?;
            let mut w = BufWriter::new(File::create(&args.out)?);
            write_train_csv(&mut w, &records)?;
            let final_val = records
                .iter()
                .rev()
                .find(|r| r.split == Split::Val)
                .expect("at least one epoch");
            println!(
                "train-toy: epoch {} val acc {:.3} -> {}",
                final_val.epoch,
                final_val.accuracy,
                args.out.display()
            );
        }
        Command::Flops(args) => {
            let report = match args.config {
                FlopsPreset::ArxivLike => arxiv_like_flops(args.n),
            };
            let mut w = BufWriter::new(File::create(&args.out)?);
            use std::io::Write;
            writeln!(w, "mechanism,n,flops_est")?;
            writeln!(w, "wersa,{},{}", report.n, report.wersa_flops.round() as u64)?;
            writeln!(
                w,
                "standard,{},{}",
                report.n,
                report.standard_flops.round() as u64
            )?;
            println!(
                "flops: n={} standard {:.1}G vs wersa {:.1}G, ratio {:.2} -> {}",
                report.n,
                report.standard_flops / 1e9,
                report.wersa_flops / 1e9,
                report.ratio,
                args.out.display()
            );
        }
    }
    Ok(())
}
