//! `micromode`: dataset generation, micromode inspection, Zig-Zag
//! simulation and study execution.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 usage or configuration
//! error. `MICROMODE_SEED` overrides the seed of any command.

mod commands;
mod io;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{emit_report, execute, replay, study_invocation, CmdResult, Failure, Invocation};

#[derive(Debug, Parser)]
#[command(name = "micromode", version, about, allow_negative_numbers = true)]
struct Cli {
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a heavy-tailed dataset and write it as CSV.
    Generate(commands::GenerateArgs),
    /// Detect, certify and measure the micromode of an extreme observation.
    Micromode(commands::MicromodeArgs),
    /// Simulate Zig-Zag trajectories for a fixed horizon or until exit.
    Zigzag(commands::ZigzagArgs),
    /// Run a study from a TOML or JSON configuration.
    Study(commands::StudyArgs),
    /// Re-run a recorded manifest and check that its outputs are identical.
    Replay(commands::ReplayArgs),
}

fn seed_override() -> CmdResult<Option<u64>> {
    match std::env::var("MICROMODE_SEED") {
        Ok(s) => match s.trim().parse() {
            Ok(v) => Ok(Some(v)),
            Err(_) => Err(Failure::Usage(format!("MICROMODE_SEED must be an unsigned integer, got `{s}`"))),
        },
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Failure::Usage(format!("MICROMODE_SEED: {e}"))),
    }
}

fn run(cli: Cli) -> CmdResult<bool> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Runtime(anyhow::anyhow!("thread pool: {e}")))?;
    }
    let seed = seed_override()?;
    let mut inv = match cli.command {
        Command::Generate(a) => Invocation::Generate(a),
        Command::Micromode(a) => Invocation::Micromode(a),
        Command::Zigzag(a) => Invocation::Zigzag(a),
        Command::Study(a) => study_invocation(&a, seed)?,
        Command::Replay(a) => return replay(&a),
    };
    if let Some(s) = seed {
        inv.set_seed(s);
    }
    emit_report(&execute(inv)?);
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
