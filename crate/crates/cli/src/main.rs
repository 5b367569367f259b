use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kph_cli::{run_scenario, CliResult, RunConfig, Scenario};

#[derive(Parser)]
#[command(name = "kph", version, about = "Structured Koopman surrogates for port-Hamiltonian systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print its JSON report.
    Run {
        scenario: Scenario,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List scenario names.
    ListScenarios,
}

fn run(scenario: Scenario, config: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> CliResult<bool> {
    let mut cfg = RunConfig::load(&config)?;
    if out.is_some() {
        cfg.output_dir = out;
    }
    if seed.is_some() {
        cfg.seed = seed;
    }
    let report = run_scenario(scenario, &cfg)?;
    println!("{}", report.to_json());
    Ok(report.passed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Command::ListScenarios => {
            for sc in Scenario::ALL {
                println!("{:<27} {}", sc.name(), sc.description());
            }
            ExitCode::SUCCESS
        }
        Command::Run { scenario, config, out, seed } => match run(scenario, config, out, seed) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(1),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}
