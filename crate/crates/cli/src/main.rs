use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use recursub_cli::output::write_json;
use recursub_cli::run::resolve_out;
use recursub_cli::{execute, Command, Invocation};

#[derive(Parser)]
#[command(name = "recursub", version, about = "Subsampling MCMC and VB for GARCH-type models")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Run configuration (TOML, or JSON by extension)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides run.seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (an existing run directory for lpds and diagnostics)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a series and write series.csv
    Simulate(Common),
    /// Pilot, calibrate and tune the sampling scheme
    Tune(Common),
    /// Run the configured engine
    Fit(Common),
    /// Score the test set of a fit run
    Lpds(Common),
    /// Recompute chain diagnostics of a fit run
    Diagnostics(Common),
    /// Write plot data for one figure kind
    FigureData(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, c) = match cli.command {
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::Tune(c) => (Command::Tune, c),
        Cmd::Fit(c) => (Command::Fit, c),
        Cmd::Lpds(c) => (Command::Lpds, c),
        Cmd::Diagnostics(c) => (Command::Diagnostics, c),
        Cmd::FigureData(c) => (Command::FigureData, c),
    };
    let inv = Invocation { command, config: c.config, seed: c.seed, out: c.out };
    match execute(&inv) {
        Ok(summary) => {
            println!("{}", serde_json::to_string(&summary).expect("summary serialises"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let record = e.record();
            eprintln!("{}", serde_json::to_string(&record).expect("error record serialises"));
            if let Some(dir) = resolve_out(&inv).filter(|d| d.is_dir()) {
                let _ = write_json(&dir.join("error.json"), &record);
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
