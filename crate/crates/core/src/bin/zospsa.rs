//! Command-line front end: `zospsa generate|run|verify|diagnose`.
//!
//! Exit codes: 0 on success (for `run`, target gap reached; for `verify`,
//! all checks pass), 2 when a run exhausts its iteration budget, 1 on any
//! error or failed verification.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use zospsa::error::Error;
use zospsa::harness::{self, ExperimentConfig, VerifyOptions};

#[derive(Parser)]
#[command(
    name = "zospsa",
    about = "Zeroth-order SPSA optimization toolkit for regularized softmax regression",
    after_help = "Any extra flag of the form --key.path=value overrides the \
                  corresponding config field, e.g. --opt.batch_size=4 or \
                  --opt.spsa.k_samples=2."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the JSON config; omitted means the built-in default
    /// verification instance.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override (reseeds generator, SPSA streams, diagnostics).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
    /// Drop the per-block regularizer from batched losses.
    #[arg(long)]
    no_reg_in_batch: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a problem instance and write problem.json.
    Generate(CommonArgs),
    /// Run the optimizer; writes trace.csv, summary.json, diagnostics.json.
    Run(CommonArgs),
    /// Run the verification suite; writes verify.json.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Deliberately violate the ‖b‖₁ ≤ 1 construction invariant, to
        /// prove the suite catches it.
        #[arg(long)]
        inject_invalid_b: bool,
    },
    /// Evaluate the diagnostics report; writes diagnostics.json.
    Diagnose(CommonArgs),
}

fn load_config(
    common: &CommonArgs,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig, Error> {
    let text = match &common.config {
        Some(path) => std::fs::read_to_string(path)?,
        None => serde_json::to_string(&ExperimentConfig::default())?,
    };
    let text = harness::apply_overrides(&text, overrides)?;
    let mut cfg = ExperimentConfig::from_json_str(&text)?;
    if let Some(seed) = common.seed.or(cfg.seed) {
        cfg.apply_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
    if common.force {
        cfg.output.force = true;
    }
    if common.no_reg_in_batch {
        cfg.no_reg_in_batch = true;
    }
    Ok(cfg)
}

/// Splits dotted-path overrides (`--a.b.c=value`) out of the raw argv so
/// clap only sees the declared flags.
fn split_overrides() -> (Vec<String>, Vec<(String, String)>) {
    let mut args = Vec::new();
    let mut overrides = Vec::new();
    for arg in std::env::args() {
        if let Some(rest) = arg.strip_prefix("--") {
            if let Some((key, value)) = rest.split_once('=') {
                if key.contains('.') && !key.contains('/') {
                    overrides.push((key.to_string(), value.to_string()));
                    continue;
                }
            }
        }
        args.push(arg);
    }
    (args, overrides)
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides();
    let cli = Cli::parse_from(args);
    let code = match run_command(cli, &overrides) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    };
    ExitCode::from(code)
}

fn run_command(cli: Cli, overrides: &[(String, String)]) -> Result<u8, Error> {
    match cli.command {
        Command::Generate(common) => {
            let cfg = load_config(&common, overrides)?;
            let path = harness::cmd_generate(&cfg)?;
            println!("wrote {}", path.display());
            Ok(0)
        }
        Command::Run(common) => {
            let cfg = load_config(&common, overrides)?;
            let summary = harness::cmd_run(&cfg)?;
            println!(
                "{}: {} iterations, final gap {:.3e} (eta {:.3e})",
                if summary.target_reached {
                    "target reached"
                } else {
                    "budget exhausted"
                },
                summary.iterations,
                summary.final_gap,
                summary.eta_used
            );
            Ok(if summary.target_reached { 0 } else { 2 })
        }
        Command::Verify {
            common,
            inject_invalid_b,
        } => {
            let cfg = load_config(&common, overrides)?;
            let report = harness::cmd_verify(&cfg, VerifyOptions { inject_invalid_b })?;
            for (name, check) in &report.checks {
                println!(
                    "[{}] {name}: {}",
                    if check.pass { "pass" } else { "FAIL" },
                    check.detail
                );
            }
            println!(
                "verification {}",
                if report.all_pass { "passed" } else { "FAILED" }
            );
            Ok(if report.all_pass { 0 } else { 1 })
        }
        Command::Diagnose(common) => {
            let cfg = load_config(&common, overrides)?;
            let report = harness::cmd_diagnose(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(0)
        }
    }
}
