use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sandpile_lab::error::EXIT_USAGE;
use sandpile_lab::{execute, Command, ExperimentConfig, LabError, Overrides};

/// Stochastic sandpile experiments.
#[derive(Parser)]
#[command(name = "sandpile", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Lemma suites and exact identities; exits 1 on any violation.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Use an instruction source that misreads every second lookup.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Settlement campaign: runs.jsonl, tails.csv, summary.json.
    Settle {
        #[command(flatten)]
        common: Common,
    },
    /// m(0) across window radii: phase.csv, summary.json.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Walk formulas against Monte Carlo, parity and reversal checks.
    Tails {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// TOML file with [common] and per-command blocks.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Main count of the command (instances, runs, seeds per cell or walks).
    #[arg(long)]
    trials: Option<u64>,
}

fn run(common: Common, cmd: Command) -> Result<(i32, String), LabError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: common.seed,
        workers: common.workers,
        out: common.out,
        trials: common.trials,
    });
    execute(cmd, &cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    let (common, cmd) = match cli.cmd {
        Cmd::Verify { common, inject_fault } => (common, Command::Verify { fault: inject_fault }),
        Cmd::Settle { common } => (common, Command::Settle),
        Cmd::Sweep { common } => (common, Command::Sweep),
        Cmd::Tails { common } => (common, Command::Tails),
    };
    match run(common, cmd) {
        Ok((code, line)) => {
            println!("{line}");
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
