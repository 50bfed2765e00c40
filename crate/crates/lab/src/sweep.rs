//! `sweep`: `m(0)` under growing windows across a `(ζ, q)` grid.

use sandpile_core::init::InitialLaw;
use sandpile_core::stabilize::odometer_window_limit;
use sandpile_core::{derive_seed, InstructionField, Window};
use serde::Serialize;

use crate::campaign::{stream, Campaign};
use crate::config::{ExperimentConfig, Law, SweepConfig};
use crate::error::LabError;
use crate::output::OutDir;
use crate::summary::{CampaignSummary, Cell, Provenance};

pub const PHASE_HEADER: [&str; 6] =
    ["zeta", "q", "radius", "frac_origin_untoppled", "mean_m0", "frac_m0_saturated"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseRow {
    pub zeta: f64,
    pub q: f64,
    pub radius: u64,
    pub frac_origin_untoppled: f64,
    pub mean_m0: f64,
    /// Per cell: `m(0)` equal at the two largest radii. Since `m(0)` is
    /// non-decreasing in the radius, the rest strictly increased.
    pub frac_m0_saturated: f64,
}

fn law(l: Law, zeta: f64) -> InitialLaw {
    match l {
        Law::Bernoulli => InitialLaw::Bernoulli(zeta),
        Law::Poisson => InitialLaw::Poisson(zeta),
    }
}

/// `m(0)` at each radius for one seed. Particles are sampled once on the
/// largest window; smaller windows stabilize the same configuration.
pub fn origin_odometers(cfg: &SweepConfig, zeta: f64, q: f64, seed: u64) -> Result<Vec<u64>, LabError> {
    let big = Window::centered(*cfg.radii.last().expect("validated radii"));
    let eta = law(cfg.law, zeta).sample(big, derive_seed(seed, 1))?;
    let field = InstructionField::new(derive_seed(seed, 2), q)?;
    Ok(odometer_window_limit(&eta, &cfg.radii, &field, 0)?)
}

pub struct SweepReport {
    pub rows: Vec<PhaseRow>,
    /// `m(0)` per cell, seed and radius.
    pub m0: Vec<Vec<Vec<u64>>>,
    pub summary: CampaignSummary,
}

pub fn saturated(m: &[u64]) -> bool {
    match m {
        [.., a, b] => a == b,
        _ => true,
    }
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepReport, LabError> {
    let sw = &cfg.sweep;
    let seeds = cfg.common.trials.unwrap_or(sw.seeds);
    let c = Campaign::new(cfg.common.seed, cfg.common.workers)?;
    let mut summary = CampaignSummary::new("sweep", Provenance::of(cfg));
    let (mut rows, mut all) = (Vec::new(), Vec::new());
    let cells = sw.zetas.iter().flat_map(|&z| sw.qs.iter().map(move |&q| (z, q)));
    for (ci, (zeta, q)) in cells.enumerate() {
        let s = derive_seed(stream::SWEEP, ci as u64);
        let m = c.try_run(s, seeds, |_, seed| origin_odometers(sw, zeta, q, seed))?;
        let n = m.len().max(1) as f64;
        let sat = m.iter().filter(|v| saturated(v)).count();
        for (ri, &radius) in sw.radii.iter().enumerate() {
            let untoppled = m.iter().filter(|v| v[ri] == 0).count();
            let total: u64 = m.iter().map(|v| v[ri]).sum();
            rows.push(PhaseRow {
                zeta,
                q,
                radius,
                frac_origin_untoppled: untoppled as f64 / n,
                mean_m0: total as f64 / n,
                frac_m0_saturated: sat as f64 / n,
            });
        }
        let last = m.iter().map(|v| *v.last().unwrap()).sum();
        summary.add(
            &format!("zeta={zeta},q={q}"),
            Cell { trials: m.len() as u64, hits: sat as u64, violations: 0, total: last },
        );
        all.push(m);
    }
    Ok(SweepReport { rows, m0: all, summary })
}

pub fn write_sweep(out: &OutDir, r: &SweepReport) -> Result<(), LabError> {
    out.csv("phase.csv", &PHASE_HEADER, &r.rows)?;
    out.json("summary.json", &r.summary.to_json())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(zetas: Vec<f64>) -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.sweep.zetas = zetas;
        c.sweep.radii = vec![10, 20, 40];
        c.common.trials = Some(12);
        c
    }

    #[test]
    fn empty_line_never_topples() {
        let r = run_sweep(&cfg(vec![0.0])).unwrap();
        assert!(r.rows.iter().all(|row| row.mean_m0 == 0.0 && row.frac_origin_untoppled == 1.0));
        assert!(r.rows.iter().all(|row| row.frac_m0_saturated == 1.0));
    }

    #[test]
    fn odometers_grow_with_radius() {
        let r = run_sweep(&cfg(vec![0.3, 1.2])).unwrap();
        assert_eq!(r.rows.len(), 6);
        for cell in &r.m0 {
            assert!(cell.iter().all(|v| v.windows(2).all(|p| p[0] <= p[1])));
        }
    }

    #[test]
    fn saturation_looks_at_the_two_largest() {
        assert!(saturated(&[1, 4, 4]));
        assert!(!saturated(&[4, 4, 5]));
    }
}
