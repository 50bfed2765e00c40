//! The four subcommands: run, write outputs, map the outcome to an exit code.

use crate::config::ExperimentConfig;
use crate::error::{LabError, EXIT_PASS, EXIT_VIOLATION};
use crate::output::OutDir;
use crate::{settle, sweep, tails, verify};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    /// `fault` swaps in [`FlakyField`](crate::fault::FlakyField).
    Verify { fault: bool },
    Settle,
    Sweep,
    Tails,
}

/// Validates `cfg`, runs `cmd` and writes its files into `cfg.common.out`.
/// Returns the exit code and a one-line report.
pub fn execute(cmd: Command, cfg: &ExperimentConfig) -> Result<(i32, String), LabError> {
    cfg.validate()?;
    let out = OutDir::create(&cfg.common.out)?;
    let code = |violations: u64| if violations == 0 { EXIT_PASS } else { EXIT_VIOLATION };
    Ok(match cmd {
        Command::Verify { fault } => {
            let r = verify::run_verify(cfg, fault)?;
            out.json("verify.json", &r)?;
            let bad = r.lemmas.iter().map(|l| l.violations.len() as u64).sum::<u64>()
                + r.identities.iter().map(|i| i.violations).sum::<u64>();
            (code(bad), format!("verify: {} suites, {bad} violation(s)", r.lemmas.len() + r.identities.len()))
        }
        Command::Settle => {
            let r = settle::run_settle(cfg)?;
            settle::write_settle(&out, &r)?;
            let ok = r.records.iter().filter(|x| x.status == settle::RunStatus::Succeeded).count();
            let v = r.summary.violations();
            (code(v), format!("settle: {ok}/{} succeeded, {v} violation(s)", r.records.len()))
        }
        Command::Sweep => {
            let r = sweep::run_sweep(cfg)?;
            sweep::write_sweep(&out, &r)?;
            (EXIT_PASS, format!("sweep: {} row(s)", r.rows.len()))
        }
        Command::Tails => {
            let r = tails::run_tails(cfg)?;
            tails::write_tails(&out, &r)?;
            let v = r.summary.violations();
            (code(v), format!("tails: {} formula cell(s), {v} violation(s)", r.formulas.len()))
        }
    })
}
