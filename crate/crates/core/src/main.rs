use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use floquet_smoothing::config::ExperimentConfig;
use floquet_smoothing::experiment::{run, Command};
use floquet_smoothing::Error;

#[derive(Parser)]
#[command(name = "floquet", version, about = "Smoothing experiments for driven anharmonic oscillators")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// CSV destination, overriding `output.path`. Without either the CSV
    /// goes to stdout and the JSON summary to stderr.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run even when the perturbation fails the reducibility gate.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Classical period over the energy sweep.
    Period,
    /// Orbit average of the spatial symbol over the energy sweep.
    Average,
    /// Autonomous homological equation on a symbol grid.
    Homolog,
    /// Iterated smoothing; writes the step ledger.
    Smooth,
    /// Galerkin evolution with Sobolev norm time series.
    Evolve,
    /// Quasi-energies from the one-period monodromy.
    Quasienergy,
    /// Monte Carlo measure of excluded frequencies.
    Measure,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Period => Command::Period,
            Cmd::Average => Command::Average,
            Cmd::Homolog => Command::Homolog,
            Cmd::Smooth => Command::Smooth,
            Cmd::Evolve => Command::Evolve,
            Cmd::Quasienergy => Command::Quasienergy,
            Cmd::Measure => Command::Measure,
        }
    }
}

fn execute(cli: &Cli) -> Result<(), Error> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::from_toml("")?,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let art = run(cli.command.into(), &cfg, cli.force)?;
    let summary = serde_json::to_string_pretty(&art.summary).map_err(|e| Error::Io(e.to_string()))?;
    let out = cli.out.clone().or_else(|| cfg.output.path.as_ref().map(PathBuf::from));
    match &out {
        Some(p) => {
            std::fs::write(p, &art.csv).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            println!("{summary}");
        }
        None => {
            print!("{}", art.csv);
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "code": e.code(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::from(if matches!(e, Error::Gate(_)) { 3 } else { 2 })
        }
    }
}
