use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nvflow::experiments::{execute, Command, Invocation, Manifest, Source};
use nvflow::{Error, Result};

/// QFI flows of an NV electron spin with controllable nuclear-spin channels.
#[derive(Parser)]
#[command(name = "nvflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// QFI traces (and any other configured outputs).
    Simulate(RunArgs),
    /// QFI flow and the channel subflows.
    Flows(RunArgs),
    /// Cumulative non-Markovianity measure from subflows and from the total flow.
    Measure(RunArgs),
    /// Long-time measure over a range of one channel angle.
    Sweep(RunArgs),
    /// Emulated photon counts and reconstructed states.
    Tomo(RunArgs),
    /// Dataset for one published panel (3a-3k, 4a-4c).
    Reproduce {
        /// Figure identifier such as `3c`; optional when replaying a manifest.
        figure: Option<String>,
        #[command(flatten)]
        args: RunArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config, or a `.json` manifest from an earlier run to replay.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for shot-noise emulation.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Emulate photon-count noise and reconstruct states by tomography.
    #[arg(long)]
    noise: bool,
}

fn load_source(path: Option<&Path>) -> Result<Source> {
    let Some(path) = path else {
        return Ok(Source::Defaults);
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let m = Manifest::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(Source::Manifest(m))
    } else {
        nvflow::experiments::parse_config(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(Source::Toml(text))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args, figure) = match cli.command {
        Cmd::Simulate(a) => (Command::Simulate, a, None),
        Cmd::Flows(a) => (Command::Flows, a, None),
        Cmd::Measure(a) => (Command::Measure, a, None),
        Cmd::Sweep(a) => (Command::Sweep, a, None),
        Cmd::Tomo(a) => (Command::Tomo, a, None),
        Cmd::Reproduce { figure, args } => (Command::Reproduce, args, figure),
    };
    let result = load_source(args.config.as_deref()).and_then(|source| {
        let inv = Invocation { command, source, seed: args.seed, noise: args.noise, figure };
        execute(&inv, &args.out)
    });
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("nvflow {}: error: {e}", command.name());
            ExitCode::FAILURE
        }
    }
}
