use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use koopman_core::bench::{parse_config_builder, run_benchmark, BenchReport, ConfigBuilder};
use koopman_core::checks::{run_all, CheckOptions};
use koopman_core::data::{synthesize_series, SynthKind};

#[derive(Parser)]
#[command(
    name = "koopbench",
    version,
    about = "Spectrally bounded Koopman forecasters: benchmark harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate the full (variant, P, H) grid.
    Bench(RunArgs),
    /// Train a single model.
    Train(RunArgs),
    /// Run the randomised invariant suite.
    Check {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic series as CSV.
    Synth {
        #[arg(long, default_value = "damped_rotation")]
        kind: String,
        #[arg(long, default_value_t = 4096)]
        len: usize,
        #[arg(long, default_value_t = 4)]
        channels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
}

/// Flags mirror configuration keys and override the file.
#[derive(Args)]
struct RunArgs {
    /// Configuration file (flat `key = value`).
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    synthetic: Option<String>,
    /// Comma-separated look-back lengths.
    #[arg(long)]
    windows: Option<String>,
    /// Comma-separated horizons.
    #[arg(long)]
    horizons: Option<String>,
    /// Comma-separated model names.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    lambda_lyap: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    output: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    /// Any other key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn builder(&self) -> Result<ConfigBuilder> {
        let mut b = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                parse_config_builder(&text).with_context(|| format!("in {}", p.display()))?
            }
            None => ConfigBuilder::default(),
        };
        let named = [
            ("data", &self.data),
            ("synthetic", &self.synthetic),
            ("windows", &self.windows),
            ("horizons", &self.horizons),
            ("variant", &self.variant),
            ("steps", &self.steps),
            ("batch_size", &self.batch_size),
            ("lr", &self.lr),
            ("lambda_lyap", &self.lambda_lyap),
            ("seed", &self.seed),
            ("output", &self.output),
            ("workers", &self.workers),
        ];
        for (key, v) in named {
            if let Some(v) = v {
                b.set(key, v, 0)?;
            }
        }
        for kv in &self.set {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{kv}`");
            };
            b.set(k.trim(), v, 0)?;
        }
        Ok(b)
    }
}

fn print_summary(report: &BenchReport) {
    print!("{}", report.summary);
    for r in report.results.iter().filter(|r| !r.status.is_ok()) {
        eprintln!("FAILED {}: {}", r.run_id(), r.status.tag());
    }
}

fn bench(args: &RunArgs) -> Result<bool> {
    let cfg = args.builder()?.build()?;
    let report = run_benchmark(&cfg)?;
    print_summary(&report);
    eprintln!("wrote {}", cfg.output.display());
    Ok(!report.any_failed())
}

fn train_one(args: &RunArgs) -> Result<bool> {
    let cfg = args.builder()?.build()?;
    if cfg.variants.len() != 1 || cfg.windows.len() != 1 || cfg.horizons.len() != 1 {
        bail!("`train` runs one model: give exactly one variant, window and horizon");
    }
    // a one-cell grid; persistence rides along when enabled
    let report = run_benchmark(&cfg)?;
    print_summary(&report);
    eprintln!("wrote {}", cfg.output.display());
    Ok(!report.any_failed())
}

fn check(trials: usize, seed: u64) -> bool {
    let mut ok = true;
    for o in run_all(CheckOptions { trials, seed }) {
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
        ok &= o.passed;
    }
    ok
}

fn synth(kind: &str, len: usize, channels: usize, seed: u64, out: &PathBuf) -> Result<bool> {
    let kind: SynthKind = kind.parse()?;
    let series = synthesize_series(kind, len, channels, seed)?;
    series
        .save_csv(out)
        .with_context(|| format!("writing {}", out.display()))?;
    eprintln!("wrote {} rows x {} channels to {}", len, channels, out.display());
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Bench(a) => bench(a),
        Command::Train(a) => train_one(a),
        Command::Check { trials, seed } => Ok(check(*trials, *seed)),
        Command::Synth {
            kind,
            len,
            channels,
            seed,
            out,
        } => synth(kind, *len, *channels, *seed, out),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
