use clap::{Parser, Subcommand};
use slipfem::experiments::{run, ExperimentConfig, ExperimentKind};
use slipfem::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "slipfem", version, about = "Navier-Stokes with nonlinear slip boundary conditions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Configuration file (JSON object or `key = value` lines).
    config: PathBuf,
    /// Override a configuration entry, e.g. `--set n=32`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print the summary as JSON instead of key-value text.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment named in the configuration.
    Solve(RunArgs),
    /// Manufactured-solution convergence table.
    Convergence(RunArgs),
    /// Discrete stability constants and the automatic penalty.
    Constants(RunArgs),
}

fn execute(cli: Cli) -> Result<String, Error> {
    let (args, forced) = match cli.command {
        Command::Solve(a) => (a, None),
        Command::Convergence(a) => (a, Some(ExperimentKind::Convergence)),
        Command::Constants(a) => (a, Some(ExperimentKind::Constants)),
    };
    let mut cfg = ExperimentConfig::load(&args.config, &args.overrides)?;
    if let Some(kind) = forced {
        cfg.experiment = kind;
    }
    let summary = run(&cfg)?;
    Ok(if args.json {
        serde_json::to_string_pretty(&summary.to_json())? + "\n"
    } else {
        summary.to_text()
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
