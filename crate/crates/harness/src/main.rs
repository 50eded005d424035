use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, ValueEnum};

use spdelab_harness::{execute, ExperimentConfig, HarnessError, RawConfig};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Simulate,
    Uniqueness,
    Estimate,
    Verify,
    Kernels,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Uniqueness => "uniqueness",
            Command::Estimate => "estimate",
            Command::Verify => "verify",
            Command::Kernels => "kernels",
        }
    }
}

/// Stochastic reaction-diffusion laboratory.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Flat `section.key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Noise seed (overrides noise.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut raw = match &cli.config {
        Some(p) => RawConfig::load(p)?,
        None => RawConfig::default(),
    };
    for o in &cli.overrides {
        raw.apply_override(o)?;
    }
    raw.set("experiment", cli.command.name())?;
    if let Some(out) = &cli.out {
        raw.set("output.dir", &out.display().to_string())?;
    }
    if let Some(seed) = cli.seed {
        raw.set("noise.seed", &seed.to_string())?;
    }
    if let Some(w) = cli.workers {
        raw.set("workers", &w.to_string())?;
    }
    Ok(ExperimentConfig::from_raw(raw)?)
}

fn run(cli: &Cli) -> anyhow::Result<usize> {
    let cfg = load(cli)?;
    let art = execute(&cfg)?;
    let written = art.write_to(&cfg.output.dir)?;
    for line in &art.summary {
        println!("{line}");
    }
    println!("wrote {} file(s) to {}", written.len(), cfg.output.dir.display());
    Ok(art.hard_failures())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli).with_context(|| format!("{} failed", cli.command.name())) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("error: {}", HarnessError::HardCheckFailed(n));
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<HarnessError>()
                .map_or(1, HarnessError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
