//! `tails`: exact walk formulas against Monte Carlo, the parity table, and
//! the reversed-explorer comparison.

use rand::rngs::SmallRng;
use rand::SeedableRng;
use sandpile_core::settle::{settle, ExplorerTrace, SettleOptions};
use sandpile_core::walks::{
    parity_exact, reversed_trajectory_check, sample_diagonal_run, HWalkKernel, ParityProcess, ReversalParams,
    ReversalReport, TailCell,
};
use sandpile_core::{derive_seed, Error, InstructionField};
use serde::Serialize;

use crate::campaign::{stream, Campaign};
use crate::config::{ExperimentConfig, TailsConfig};
use crate::error::LabError;
use crate::output::OutDir;
use crate::summary::{CampaignSummary, Cell, Provenance};
use crate::verify::parity_by_convolution;

pub const FORMULA_HEADER: [&str; 10] =
    ["kernel", "q", "s", "exact_tail", "mc_tail", "n_samples", "ci_low", "ci_high", "pass", "low_power"];

pub const PARITY_HEADER: [&str; 7] = ["p1", "n", "exact", "oracle", "abs_error", "decay_error", "pass"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FormulaRow {
    pub kernel: &'static str,
    pub q: f64,
    pub s: u64,
    pub exact_tail: f64,
    pub mc_tail: f64,
    pub n_samples: u64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub pass: bool,
    pub low_power: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParityRow {
    pub p1: f64,
    pub n: u32,
    pub exact: f64,
    pub oracle: f64,
    pub abs_error: f64,
    pub decay_error: f64,
    pub pass: bool,
}

/// `hits[s-1]` = walks whose diagonal run exceeds `s`, for `s ≤ max_s`.
pub fn diagonal_hits(k: &HWalkKernel, max_s: u64, walks: u64, seed: u64) -> Vec<u64> {
    let mut rng = SmallRng::seed_from_u64(seed);
    let mut hits = vec![0u64; max_s as usize];
    for _ in 0..walks {
        let run = sample_diagonal_run(k, max_s + 1, &mut rng);
        // run > s for s = 1..min(run, max_s+1)-1
        for h in hits.iter_mut().take(run.saturating_sub(1) as usize) {
            *h += 1;
        }
    }
    hits
}

/// Monte Carlo tails of one kernel. Walks are drawn in fixed chunks, each
/// from its own seed, so the counts do not depend on the schedule.
pub fn formula_rows(c: &Campaign, t: &TailsConfig, qi: u64, q: f64, samples: u64) -> Result<Vec<FormulaRow>, LabError> {
    let k = HWalkKernel::new(q)?;
    let chunks = samples.div_ceil(t.chunk);
    let parts = c.run(derive_seed(stream::TAILS, qi), chunks, |i, seed| {
        let n = t.chunk.min(samples - i * t.chunk);
        diagonal_hits(&k, t.max_s, n, seed)
    });
    let mut hits = vec![0u64; t.max_s as usize];
    for p in parts {
        hits.iter_mut().zip(p).for_each(|(h, x)| *h += x);
    }
    (1..=t.max_s)
        .map(|s| {
            let cell = TailCell::new(s, hits[s as usize - 1], samples, k.diagonal_tail(s as i64)?, t.min_n);
            Ok(FormulaRow {
                kernel: k.label(),
                q,
                s,
                exact_tail: cell.exact,
                mc_tail: cell.empirical(),
                n_samples: samples,
                ci_low: cell.ci_low,
                ci_high: cell.ci_high,
                pass: cell.pass,
                low_power: cell.low_power,
            })
        })
        .collect()
}

pub fn parity_rows(t: &TailsConfig, tolerance: f64) -> Vec<ParityRow> {
    let mut rows = Vec::new();
    for &p1 in &t.parity_p1s {
        for n in 0..=t.parity_max_n {
            let exact = parity_exact(ParityProcess { p1, n });
            let oracle = parity_by_convolution(p1, n);
            let abs_error = (exact - oracle).abs();
            let decay_error = ((exact - 0.5).abs() - 0.5 * (2.0 * p1 - 1.0).abs().powi(n as i32)).abs();
            rows.push(ParityRow { p1, n, exact, oracle, abs_error, decay_error, pass: abs_error <= tolerance && decay_error <= tolerance });
        }
    }
    rows
}

/// Explorer traces from settlement runs at left probability `q`; traces of
/// failed runs count, aborted runs contribute none.
pub fn reversal_report(c: &Campaign, t: &TailsConfig, qi: u64, q: f64) -> Result<ReversalReport, LabError> {
    let r = &t.reversal;
    let opts = SettleOptions { step_cap: r.step_cap, ..SettleOptions::default() };
    let per_run = c.try_run(derive_seed(stream::REVERSAL, qi), r.runs, |_, seed| {
        let field = InstructionField::new(seed, q)?;
        match settle(r.zeta, &field, seed, r.budget, r.window, opts) {
            Ok(s) => Ok(s.traces),
            Err(Error::ExplorerCap { .. } | Error::InsufficientParticles { .. }) => Ok(Vec::new()),
            Err(e) => Err(LabError::from(e)),
        }
    })?;
    let traces: Vec<ExplorerTrace> = per_run.into_iter().flatten().collect();
    let params = ReversalParams {
        max_s: t.max_s,
        hwalk_samples: r.hwalk_samples,
        seed: derive_seed(c.master, derive_seed(stream::REVERSAL, qi)),
        ..ReversalParams::default()
    };
    Ok(reversed_trajectory_check(&traces, &HWalkKernel::new(q)?, &params)?)
}

pub struct TailsReport {
    pub formulas: Vec<FormulaRow>,
    pub parity: Vec<ParityRow>,
    pub reversal: Vec<ReversalReport>,
    pub summary: CampaignSummary,
}

pub fn run_tails(cfg: &ExperimentConfig) -> Result<TailsReport, LabError> {
    let t = &cfg.tails;
    let samples = cfg.common.trials.unwrap_or(t.samples);
    let c = Campaign::new(cfg.common.seed, cfg.common.workers)?;
    let mut summary = CampaignSummary::new("tails", Provenance::of(cfg));
    let tally = |pass: bool| Cell { trials: 1, hits: u64::from(pass), violations: u64::from(!pass), total: 0 };

    let mut formulas = Vec::new();
    for (qi, &q) in t.qs.iter().enumerate() {
        let rows = formula_rows(&c, t, qi as u64, q, samples)?;
        for r in &rows {
            summary.add(&format!("formula/q={q}"), tally(r.pass));
        }
        formulas.extend(rows);
    }
    let parity = parity_rows(t, cfg.verify.tolerance);
    for r in &parity {
        summary.add("parity", tally(r.pass));
    }
    let mut reversal = Vec::new();
    if t.reversal.enabled {
        for (qi, &q) in t.qs.iter().enumerate() {
            let rep = reversal_report(&c, t, qi as u64, q)?;
            summary.add(&format!("reversal/q={q}"), tally(rep.passed));
            reversal.push(rep);
        }
    }
    Ok(TailsReport { formulas, parity, reversal, summary })
}

pub fn write_tails(out: &OutDir, r: &TailsReport) -> Result<(), LabError> {
    out.csv("walk_tails.csv", &FORMULA_HEADER, &r.formulas)?;
    out.csv("parity.csv", &PARITY_HEADER, &r.parity)?;
    out.json("reversal.json", &r.reversal)?;
    out.json("summary.json", &r.summary.to_json())?;
    Ok(())
}
