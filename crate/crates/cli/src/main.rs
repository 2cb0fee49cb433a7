use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, ValueEnum};
use sqglab::commands::{cmd_evolve, cmd_instability, cmd_modulus, cmd_spectrum, cmd_steady};
use sqglab::{exit_code, RunConfig, Verdict, EXIT_OK, EXIT_SCIENTIFIC};

#[derive(Parser)]
#[command(name = "sqglab", version, about = "Forced critical SQG experiments on the torus")]
struct Cli {
    command: Command,
    /// INI run configuration
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides [io] outDir)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the ε sweep
    #[arg(long)]
    jobs: Option<usize>,
    /// Seed for every random sampler
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(ValueEnum, Clone, Copy)]
enum Command {
    /// Build the steady state and its force
    Steady,
    /// Rightmost eigenpair of the linearized operator
    Spectrum,
    /// Integrate the forced equation from the configured initial data
    Evolve,
    /// ε sweep of eigenfunction perturbations and the escape-time law
    Instability,
    /// Choose the modulus scale and check the modulus inequality
    Modulus,
}

fn run(cli: &Cli) -> Result<Verdict> {
    let cfg = RunConfig::load(&cli.config)?.with_overrides(cli.out.clone(), cli.seed);
    if cli.jobs == Some(0) {
        return Err(sqglab::ConfigError::Invalid("--jobs must be at least 1".into()).into());
    }
    match cli.command {
        Command::Steady => cmd_steady(&cfg),
        Command::Spectrum => cmd_spectrum(&cfg),
        Command::Evolve => cmd_evolve(&cfg),
        Command::Instability => cmd_instability(&cfg, cli.jobs),
        Command::Modulus => cmd_modulus(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Verdict::Pass) => ExitCode::from(EXIT_OK),
        Ok(Verdict::Fail(why)) => {
            eprintln!("sqglab: check failed: {why}");
            ExitCode::from(EXIT_SCIENTIFIC)
        }
        Err(e) => {
            eprintln!("sqglab: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
