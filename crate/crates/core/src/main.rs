// Copyright 2026 the finsler-quant Authors
// SPDX-License-Identifier: Apache-2.0

//! `kq`: batch experiments for Finsler envelopes and their quantization.
//!
//! Exit status is 0 on success, 2 when an invariant check failed (details in
//! `failures.csv`), 3 on a solver or configuration error and 1 on a usage
//! error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use finsler_quant::harness::{emit, run, ExperimentConfig, ExperimentKind};
use finsler_quant::Result;

#[derive(Parser)]
#[command(name = "kq", version, about = "Finsler envelopes, Monge-Ampere geodesics and quantization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form and finite-difference toric geodesics.
    Geodesic(Args),
    /// Hilbert and Fubini-Study maps.
    Quantize(Args),
    /// Extremal Finsler envelopes with their barrier.
    Envelope(Args),
    /// Trace-equation barrier only.
    Hym(Args),
    /// Quantized convergence table.
    Converge(Args),
    /// Griffiths-negativity certificates and the semiclassical check.
    Certify(Args),
}

#[derive(clap::Args)]
struct Args {
    /// TOML experiment config.
    #[arg(long, conflicts_with = "default")]
    config: Option<PathBuf>,
    /// Use the built-in default battery.
    #[arg(long)]
    default: bool,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of fiber intervals (a power of two).
    #[arg(long)]
    resolution: Option<usize>,
    /// Comma-separated quantization levels.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
}

fn configure(kind: ExperimentKind, args: &Args) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default_battery(),
    };
    cfg.experiment = kind;
    if let Some(r) = args.resolution {
        cfg.fiber.resolution = r;
    }
    if let Some(k) = &args.k {
        cfg.k_list = k.clone();
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_threads() {
    if let Some(n) = std::env::var("KQ_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // a second initialization only happens in tests; ignoring it is fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_threads();
    let (kind, args) = match &cli.command {
        Command::Geodesic(a) => (ExperimentKind::Geodesic, a),
        Command::Quantize(a) => (ExperimentKind::Quantize, a),
        Command::Envelope(a) => (ExperimentKind::Envelope, a),
        Command::Hym(a) => (ExperimentKind::Hym, a),
        Command::Converge(a) => (ExperimentKind::Converge, a),
        Command::Certify(a) => (ExperimentKind::Certify, a),
    };
    let outcome = configure(kind, args).and_then(|cfg| {
        let art = run(&cfg)?;
        let manifest = emit(&cfg, &art, &cfg.output_dir)?;
        Ok((art, manifest))
    });
    match outcome {
        Ok((art, manifest)) => {
            println!("wrote {}", manifest.display());
            if art.checks.failures.is_empty() {
                println!("{} checks passed", art.checks.passed.len());
                ExitCode::SUCCESS
            } else {
                for f in &art.checks.failures {
                    eprintln!("invariant failed: {}.{} = {:e} (threshold {:e})", f.suite, f.check, f.value, f.threshold);
                }
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
