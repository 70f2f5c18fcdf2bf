use anyhow::Context;
use bfd_cli::config::{is_config_error, RunConfig};
use bfd_cli::runner::{self, Outcome};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Fermi-Dirac kinetic simulator and hydrodynamic-limit diagnostics.
#[derive(Debug, Parser)]
#[command(name = "bfd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config; defaults are used for anything missing.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root; the run goes to `<out>/<command>-<run id>/`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Kinetic run with monitors and fitted macroscopic fields.
    Simulate,
    /// Eps-sweep with concentration, fit, wave-distance and defect trends.
    LimitSweep,
    /// Fourier solve of the wave system, optionally against a kinetic run.
    Wave,
    /// Oracle suite.
    Verify,
    /// Extremal families for the entropy-to-mass constant.
    Optimality,
    /// Conservation defect and energy fluxes along a kinetic run.
    Defects,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::LimitSweep => "limit-sweep",
            Command::Wave => "wave",
            Command::Verify => "verify",
            Command::Optimality => "optimality",
            Command::Defects => "defects",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome { dir, failed }) => {
            println!("{}", dir.display());
            if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                for f in &failed {
                    eprintln!("check failed: {f}");
                }
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_config_error(&e) { 2 } else { 1 })
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?.with_env(std::env::vars())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.to_string_lossy().into_owned();
    }
    cfg.validate()?;
    let exec = bfd_core::par::configure_threads(cli.threads);
    let name = cli.command.name();
    let art = runner::Artifacts::create(&cfg, name)?;
    let out = match cli.command {
        Command::Simulate => runner::simulate(&cfg, &art, exec),
        Command::LimitSweep => runner::limit_sweep(&cfg, &art, exec),
        Command::Wave => runner::wave(&cfg, &art, exec),
        Command::Verify => runner::verify(&cfg, &art, exec),
        Command::Optimality => runner::optimality(&cfg, &art),
        Command::Defects => runner::defects(&cfg, &art, exec),
    };
    out.with_context(|| format!("{name} failed"))
}
