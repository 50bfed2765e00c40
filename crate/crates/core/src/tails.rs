//! Conditional tails of the trap distances `a_{k+1} − b_k` and `c_{k+1} − b_k`.
//!
//! A pair `(run, k)` enters the estimate when `K ≤ k < P` and the run lies in
//! `A ∩ B_k`. Counts are plain sums, so per-run tallies merge in any order.
//!
//! For the `c` tail only pairs with `x_{k+1} − b_k > s` count at `s`: the
//! reversed path of explorer `k+1` is an h-walk stopped at height
//! `x_{k+1} − b_k`, and the exact diagonal tail needs that much room.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::growth::{event_a, event_indicators, k_threshold, GrowthParams};
use crate::settle::Settlement;
use crate::stats::{wilson, Z3};
use crate::walks::HWalkKernel;

/// Exceedance counts for `s = 1..=max_s` (index `s - 1`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TailCounts {
    pub max_s: u64,
    /// Runs offered, including aborted ones.
    pub runs: u64,
    /// Runs that hit the explorer step cap; they carry no pairs.
    pub aborted: u64,
    /// Runs contributing at least one pair.
    pub conditioned_runs: u64,
    /// Conditioned pairs.
    pub n_cond: u64,
    pub a_exceed: Vec<u64>,
    /// Pairs with `x_{k+1} − b_k > s`.
    pub c_room: Vec<u64>,
    /// Among those, pairs with `c_{k+1} − b_k > s`.
    pub c_exceed: Vec<u64>,
}

impl TailCounts {
    pub fn new(max_s: u64) -> Self {
        let z = vec![0; max_s as usize];
        TailCounts {
            max_s,
            runs: 0,
            aborted: 0,
            conditioned_runs: 0,
            n_cond: 0,
            a_exceed: z.clone(),
            c_room: z.clone(),
            c_exceed: z,
        }
    }

    pub fn record_aborted(&mut self) {
        self.runs += 1;
        self.aborted += 1;
    }

    /// Adds the conditioned pairs of one finished run.
    pub fn record(&mut self, run: &Settlement, params: &GrowthParams) -> Result<()> {
        let kk = k_threshold(params)? as usize;
        self.runs += 1;
        // A is the same for every k: it looks at all P positions
        if !event_a(&run.positions[..run.budget], params.gamma1) {
            return Ok(());
        }
        let mut any = false;
        for k in kk..run.budget {
            let Some(t) = run.traces.get(k) else { break };
            if !event_indicators(run, params, k)?.b {
                break; // B_k is decreasing in k
            }
            any = true;
            self.n_cond += 1;
            let room = t.start - t.barrier;
            for s in 1..=self.max_s {
                let i = (s - 1) as usize;
                let s = s as i64;
                self.a_exceed[i] += u64::from(t.a_minus_b() > s.into());
                if room > s {
                    self.c_room[i] += 1;
                    self.c_exceed[i] += u64::from(t.c_minus_b() > s.into());
                }
            }
        }
        self.conditioned_runs += u64::from(any);
        Ok(())
    }

    pub fn merge(&mut self, other: &TailCounts) -> Result<()> {
        if self.max_s != other.max_s {
            return Err(Error::Precondition("tail counts with different max_s".into()));
        }
        self.runs += other.runs;
        self.aborted += other.aborted;
        self.conditioned_runs += other.conditioned_runs;
        self.n_cond += other.n_cond;
        for (v, w) in [
            (&mut self.a_exceed, &other.a_exceed),
            (&mut self.c_room, &other.c_room),
            (&mut self.c_exceed, &other.c_exceed),
        ] {
            v.iter_mut().zip(w).for_each(|(a, b)| *a += b);
        }
        Ok(())
    }
}

/// One line of the tail table. `ci_low`/`ci_high` bound the tail under test
/// at this `s`: the `a` tail for `s ≤ N`, the `c` tail beyond.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub s: u64,
    pub n_cond: u64,
    pub emp_a_tail: f64,
    pub emp_c_tail: f64,
    /// `(½+ε)^s`.
    pub bound_a: f64,
    /// The diagonal-run tail of the h-walk.
    pub exact_c: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Denominator of the `c` tail.
    pub n_c: u64,
    pub pass: bool,
    pub low_power: bool,
}

/// Builds the table. For `s ≤ N` a row fails when the whole 3σ band lies
/// above `bound_a`; beyond `N` when `exact_c` is outside the band. Rows with
/// fewer than `min_n` samples in the tested tail pass and are flagged.
pub fn tail_rows(counts: &TailCounts, params: &GrowthParams, q: f64, min_n: u64) -> Result<Vec<TailRow>> {
    let kernel = HWalkKernel::new(q)?;
    let frac = |k: u64, n: u64| if n == 0 { f64::NAN } else { k as f64 / n as f64 };
    (1..=counts.max_s)
        .map(|s| {
            let i = (s - 1) as usize;
            let (ae, cr, ce) = (counts.a_exceed[i], counts.c_room[i], counts.c_exceed[i]);
            let bound_a = libm::pow(0.5 + params.epsilon, s as f64);
            let exact_c = kernel.diagonal_tail(s as i64)?;
            let (hits, n) = if s <= params.n { (ae, counts.n_cond) } else { (ce, cr) };
            let (ci_low, ci_high) = wilson(hits, n, Z3);
            let low_power = n < min_n;
            let ok = if s <= params.n {
                ci_low <= bound_a
            } else {
                ci_low <= exact_c && exact_c <= ci_high
            };
            Ok(TailRow {
                s,
                n_cond: counts.n_cond,
                emp_a_tail: frac(ae, counts.n_cond),
                emp_c_tail: frac(ce, cr),
                bound_a,
                exact_c,
                ci_low,
                ci_high,
                n_c: cr,
                pass: low_power || ok,
                low_power,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instructions::InstructionField;
    use crate::settle::{settle, SettleOptions};

    fn params() -> GrowthParams {
        GrowthParams { zeta: 0.1, gamma1: 6.0, gamma2: 3.5, m: 2, n: 4, epsilon: 0.1, rho: 0.75 }
    }

    fn collect(seeds: core::ops::Range<u64>, q: f64) -> TailCounts {
        let mut c = TailCounts::new(8);
        let opts = SettleOptions { step_cap: 1_000_000, ..SettleOptions::default() };
        for seed in seeds {
            let f = InstructionField::new(seed, q).unwrap();
            match settle(0.1, &f, seed, 20, 1000, opts) {
                Ok(s) => c.record(&s, &params()).unwrap(),
                Err(Error::ExplorerCap { .. }) => c.record_aborted(),
                Err(e) => panic!("{e}"),
            }
        }
        c
    }

    #[test]
    fn counts_are_consistent() {
        let c = collect(0..150, 0.6);
        assert!(c.n_cond > 0);
        assert!(c.a_exceed.windows(2).all(|w| w[0] >= w[1]));
        assert!(c.c_room.windows(2).all(|w| w[0] >= w[1]));
        assert!(c.c_exceed.iter().zip(&c.c_room).all(|(e, r)| e <= r));
        assert!(c.c_room[0] <= c.n_cond);
    }

    #[test]
    fn merge_is_order_free() {
        let (a, b) = (collect(0..40, 0.6), collect(40..80, 0.6));
        let mut ab = a.clone();
        ab.merge(&b).unwrap();
        let mut ba = b.clone();
        ba.merge(&a).unwrap();
        assert_eq!(ab, ba);
        assert_eq!(ab, collect(0..80, 0.6));
        assert!(ab.merge(&TailCounts::new(3)).is_err());
    }

    #[test]
    fn row_logic() {
        let mut c = TailCounts::new(6);
        c.n_cond = 1000;
        c.a_exceed = vec![500, 300, 100, 50, 10, 5];
        c.c_room = vec![1000, 1000, 1000, 1000, 1000, 40];
        c.c_exceed = vec![750, 500, 312, 187, 190, 1];
        let rows = tail_rows(&c, &params(), 0.5, 50).unwrap();
        assert!(rows[..4].iter().all(|r| r.pass && !r.low_power));
        assert!(rows[1].ci_low > 0.25, "a tail at s = 2 is well above ½² but under 0.6²");
        assert_eq!(rows[1].exact_c, 0.75);
        assert!(rows[4].pass, "c tail 190/1000 vs 6/32");
        let rows5 = &rows[4];
        assert!((rows5.exact_c - 0.1875).abs() < 1e-15);
        assert!(rows[5].low_power && rows[5].pass);
        c.c_exceed[4] = 300;
        assert!(!tail_rows(&c, &params(), 0.5, 50).unwrap()[4].pass);
    }
}
