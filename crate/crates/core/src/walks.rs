//! Walks conditioned to stay positive, the parity-decay law, and a
//! distributional comparison of time-reversed explorer paths against them.
//!
//! The conditioned walk has up-probability `q·h(x+1)/h(x)` at `x ≥ 1` for the
//! harmonic function `h` with `h(0) = 0`. With `r = (1−q)/q`, `h(x) = x` when
//! `q = ½` and `h(x) = 1 − r^x` otherwise; the biased form is evaluated with
//! `expm1` so it stays accurate for large `x`.

use alloc::vec::Vec;

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instructions::Direction;
use crate::settle::ExplorerTrace;
use crate::stats::{self, KsResult, Z3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Unbiased,
    Biased,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HWalkKernel {
    q: f64,
    kind: KernelKind,
    /// `ln r`; unused for the unbiased kernel.
    ln_r: f64,
}

impl HWalkKernel {
    /// `q ∈ [½, 1)` is the probability of a step towards the barrier in the
    /// forward walk, i.e. of an up-step in the reversed one.
    pub fn new(q: f64) -> Result<Self> {
        if !(0.5..1.0).contains(&q) {
            return Err(Error::InvalidParameter(alloc::format!(
                "kernel needs q in [0.5, 1), got {q}"
            )));
        }
        let kind = if q == 0.5 { KernelKind::Unbiased } else { KernelKind::Biased };
        Ok(HWalkKernel {
            q,
            kind,
            ln_r: libm::log((1.0 - q) / q),
        })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            KernelKind::Unbiased => "unbiased",
            KernelKind::Biased => "biased",
        }
    }

    /// The harmonic function; `h(0) = 0`.
    pub fn h(&self, x: u64) -> f64 {
        match self.kind {
            KernelKind::Unbiased => x as f64,
            KernelKind::Biased => -libm::expm1(x as f64 * self.ln_r),
        }
    }

    /// Probability that the conditioned walk started at `from` ever visits
    /// `to ≤ from`: `r^{from−to} h(to)/h(from)`.
    pub fn hit_probability(&self, from: u64, to: u64) -> f64 {
        debug_assert!(1 <= to && to <= from);
        let r_pow = match self.kind {
            KernelKind::Unbiased => 1.0,
            KernelKind::Biased => libm::exp((from - to) as f64 * self.ln_r),
        };
        r_pow * self.h(to) / self.h(from)
    }

    /// `|q·h(x+1) + (1−q)·h(x−1) − h(x)|` for `x ≥ 1`.
    pub fn harmonicity_residual(&self, x: u64) -> f64 {
        debug_assert!(x >= 1);
        libm::fabs(self.q * self.h(x + 1) + (1.0 - self.q) * self.h(x - 1) - self.h(x))
    }

    /// Probability of stepping from `x ≥ 1` to `x + 1`.
    pub fn up_probability(&self, x: i64) -> Result<f64> {
        if x <= 0 {
            return Err(Error::InvalidParameter(alloc::format!(
                "up_probability needs x >= 1, got {x}"
            )));
        }
        Ok(self.up_unchecked(x as u64))
    }

    #[inline]
    fn up_unchecked(&self, x: u64) -> f64 {
        match self.kind {
            KernelKind::Unbiased => (x + 1) as f64 / (2 * x) as f64,
            // equals 1 at x = 1; rounding must not push it past
            KernelKind::Biased => (self.q * self.h(x + 1) / self.h(x)).min(1.0),
        }
    }

    /// `P[Z_n = n for all n ≤ s+1]`: the product of up-probabilities over
    /// `x = 1..=s`, in closed form `q^s h(s+1)/h(1)`.
    pub fn diagonal_tail(&self, s: i64) -> Result<f64> {
        if s < 1 {
            return Err(Error::InvalidParameter(alloc::format!(
                "diagonal_tail needs s >= 1, got {s}"
            )));
        }
        let s = s as u64;
        Ok(match self.kind {
            KernelKind::Unbiased => (s + 1) as f64 * libm::exp2(-(s as f64)),
            KernelKind::Biased => {
                libm::exp(s as f64 * libm::log(self.q)) * self.h(s + 1) / self.h(1)
            }
        })
    }

    /// One step of the conditioned walk from `x ≥ 0`.
    #[inline]
    pub fn step<R: Rng + ?Sized>(&self, x: u64, rng: &mut R) -> u64 {
        if x == 0 || rng.random::<f64>() < self.up_unchecked(x) {
            x + 1
        } else {
            x - 1
        }
    }
}

/// Path `Z_0 = 0, Z_1 = 1, …, Z_steps` of the conditioned walk.
pub fn sample_h_walk(kernel: &HWalkKernel, steps: u64, seed: u64) -> Vec<u64> {
    let mut rng = SmallRng::seed_from_u64(seed);
    let mut path = Vec::with_capacity(steps as usize + 1);
    let mut z = 0u64;
    path.push(z);
    for _ in 0..steps {
        z = kernel.step(z, &mut rng);
        path.push(z);
    }
    path
}

/// Length of the initial run along the diagonal, capped at `cap`.
pub fn sample_diagonal_run<R: Rng + ?Sized>(kernel: &HWalkKernel, cap: u64, rng: &mut R) -> u64 {
    let mut z = 0;
    while z < cap {
        let next = kernel.step(z, rng);
        if next < z {
            break;
        }
        z = next;
    }
    z
}

/// Parity of a sum of `n` i.i.d. summands, each even with probability `p1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParityProcess {
    pub p1: f64,
    pub n: u32,
}

/// `P[sum even] = ½ + ½(2p₁−1)^n`.
pub fn parity_exact(p: ParityProcess) -> f64 {
    0.5 + 0.5 * libm::pow(2.0 * p.p1 - 1.0, f64::from(p.n))
}

/// Parameters of [`reversed_trajectory_check`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReversalParams {
    /// Diagonal-run tails are tested for `1 ≤ s ≤ max_s`.
    pub max_s: u64,
    /// Excursion statistics use levels `0..levels` of the conditioned walk.
    pub levels: u64,
    /// Height the conditioned walk must reach before its last visits to the
    /// first `levels + 1` sites are resolved.
    pub height: u64,
    pub hwalk_samples: u64,
    /// Step cap for the descent used to resolve returns below `height`.
    pub descent_cap: u64,
    /// Family-wise KS level, split over the two KS tests.
    pub alpha: f64,
    /// Lag-1 rank correlation bound; widened to 3/√n for small samples.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for ReversalParams {
    fn default() -> Self {
        ReversalParams {
            max_s: 10,
            levels: 4,
            height: 48,
            hwalk_samples: 20_000,
            descent_cap: 100_000_000,
            alpha: 0.001,
            tolerance: 0.02,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCell {
    pub s: u64,
    pub n: u64,
    pub hits: u64,
    pub exact: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub pass: bool,
    pub low_power: bool,
}

impl TailCell {
    /// Pass iff `exact` lies inside the Wilson band; cells with fewer than
    /// `min_n` samples pass but are flagged.
    pub fn new(s: u64, hits: u64, n: u64, exact: f64, min_n: u64) -> Self {
        let (ci_low, ci_high) = stats::wilson(hits, n, Z3);
        let low_power = n < min_n;
        TailCell {
            s,
            n,
            hits,
            exact,
            ci_low,
            ci_high,
            pass: low_power || (ci_low <= exact && exact <= ci_high),
            low_power,
        }
    }

    pub fn empirical(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.hits as f64 / self.n as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoSample {
    pub ks: KsResult,
    pub critical: f64,
    pub mean_z: f64,
    pub pass: bool,
    pub low_power: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReversalReport {
    pub q: f64,
    pub explorers: u64,
    pub diagonal: Vec<TailCell>,
    /// Gaps between successive last visits.
    pub excursions: TwoSample,
    /// Visits to level `ℓ+1` between the last visits to `ℓ` and `ℓ+1`.
    pub segment_visits: TwoSample,
    pub lag1_pairs: u64,
    pub lag1_spearman: f64,
    pub lag1_pass: bool,
    pub hwalk_samples: u64,
    pub hwalk_capped: u64,
    pub passed: bool,
}

/// Statistics of one reversed explorer path.
#[derive(Default)]
struct ReversedStats {
    span: u64,
    diagonal_run: u64,
    gaps: Vec<u64>,
    visits: Vec<u64>,
}

fn explorer_stats(t: &ExplorerTrace) -> ReversedStats {
    let span = (t.start - t.barrier) as u64;
    let diagonal_run = t.path.trailing(Direction::Left);
    // forward segments between first hits of successive new minima; the
    // reversal of segment ending at level ℓ is [σ_ℓ, σ_{ℓ+1}]
    let mut gaps = Vec::with_capacity(span as usize);
    let mut visits = Vec::with_capacity(span as usize);
    let (mut x, mut min, mut since, mut seen) = (t.start, t.start, 0u64, 1u64);
    for (n, d) in t.path.iter().enumerate() {
        x += d.step();
        let n = n as u64 + 1;
        if x < min {
            gaps.push(n - since);
            visits.push(seen);
            min = x;
            since = n;
            seen = 1;
        } else if x == min {
            seen += 1;
        }
    }
    // forward order runs from level span-1 down to 0
    gaps.reverse();
    visits.reverse();
    ReversedStats { span, diagonal_run, gaps, visits }
}

/// Resolves the first `levels + 1` last-visit times of a conditioned walk.
///
/// After the walk first reaches `height`, it returns to `levels` with
/// probability [`HWalkKernel::hit_probability`]; conditioned on returning, it
/// moves as the unconditioned walk with the drift reversed until it does.
/// Repeating until no return occurs gives the exact law. `None` when the descent cap is hit.
fn hwalk_stats<R: Rng + ?Sized>(
    k: &HWalkKernel,
    levels: u64,
    height: u64,
    max_s: u64,
    cap: u64,
    rng: &mut R,
) -> Option<ReversedStats> {
    let diagonal_run = sample_diagonal_run(k, max_s + 1, rng);
    // (time, level) of every visit at or below `levels`
    let mut low: Vec<(u64, u64)> = alloc::vec![(0, 0)];
    let (mut z, mut n) = (0u64, 0u64);
    let p_return = k.hit_probability(height, levels);
    loop {
        while z < height {
            z = k.step(z, rng);
            n += 1;
            if z <= levels {
                low.push((n, z));
            }
        }
        if rng.random::<f64>() >= p_return {
            break;
        }
        let mut steps = 0u64;
        while z > levels {
            if steps == cap {
                return None;
            }
            steps += 1;
            z = if rng.random::<f64>() < k.q { z - 1 } else { z + 1 };
            n += 1;
        }
        low.push((n, z));
    }
    let mut last = alloc::vec![0u64; levels as usize + 1];
    for &(n, z) in &low {
        last[z as usize] = n;
    }
    let mut visits = alloc::vec![0u64; levels as usize];
    for &(n, z) in &low {
        if z >= 1 && n >= last[z as usize - 1] {
            visits[z as usize - 1] += 1;
        }
    }
    let gaps = (0..levels as usize).map(|l| last[l + 1] - last[l]).collect();
    Some(ReversedStats {
        span: u64::MAX,
        diagonal_run,
        gaps,
        visits,
    })
}

fn two_sample(a: &[f64], b: &[f64], alpha: f64) -> TwoSample {
    let ks = stats::ks_two_sample(a, b);
    let low_power = a.len() < 50 || b.len() < 50;
    let critical = if low_power { f64::NAN } else { ks.critical(alpha) };
    TwoSample {
        ks,
        critical,
        mean_z: if low_power { f64::NAN } else { stats::mean_z(a, b) },
        pass: low_power || ks.statistic <= critical,
        low_power,
    }
}

/// Compares time-reversed explorer paths against the conditioned walk.
///
/// Diagonal runs: a reversed path stays on the diagonal for more than `s`
/// steps iff its forward path ends with more than `s` left steps; this is
/// observable only when `start − barrier > s`, so the tail at `s` is taken
/// over those traces and compared with `diagonal_tail(s)`.
/// Excursions and segment visits: pooled over levels, two-sample KS against
/// the conditioned walk; lag-1 rank correlation within each trace.
pub fn reversed_trajectory_check(
    traces: &[ExplorerTrace],
    kernel: &HWalkKernel,
    params: &ReversalParams,
) -> Result<ReversalReport> {
    if params.levels == 0 || params.height <= params.levels {
        return Err(Error::InvalidParameter("need 0 < levels < height".into()));
    }
    let explorer: Vec<ReversedStats> = traces.iter().map(explorer_stats).collect();

    let mut diagonal = Vec::new();
    for s in 1..=params.max_s {
        let (mut n, mut hits) = (0, 0);
        for e in explorer.iter().filter(|e| e.span > s) {
            n += 1;
            hits += u64::from(e.diagonal_run > s);
        }
        diagonal.push(TailCell::new(s, hits, n, kernel.diagonal_tail(s as i64)?, 100));
    }

    let mut rng = SmallRng::seed_from_u64(params.seed);
    let mut walks = Vec::new();
    let mut capped = 0;
    for _ in 0..params.hwalk_samples {
        match hwalk_stats(kernel, params.levels, params.height, params.max_s, params.descent_cap, &mut rng) {
            Some(w) => walks.push(w),
            None => capped += 1,
        }
    }

    let pool = |v: &[ReversedStats], f: fn(&ReversedStats) -> &Vec<u64>| -> Vec<f64> {
        v.iter().flat_map(|e| f(e).iter().map(|&g| g as f64)).collect()
    };
    let alpha = params.alpha / 2.0;
    let excursions = two_sample(&pool(&explorer, |e| &e.gaps), &pool(&walks, |e| &e.gaps), alpha);
    let segment_visits =
        two_sample(&pool(&explorer, |e| &e.visits), &pool(&walks, |e| &e.visits), alpha);

    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for e in &explorer {
        for w in e.gaps.windows(2) {
            xs.push(w[0] as f64);
            ys.push(w[1] as f64);
        }
    }
    let lag1_pairs = xs.len() as u64;
    let lag1_spearman = if lag1_pairs >= 3 { stats::spearman(&xs, &ys) } else { f64::NAN };
    let bound = params.tolerance.max(3.0 / libm::sqrt(lag1_pairs as f64));
    let lag1_pass = lag1_pairs < 100 || libm::fabs(lag1_spearman) <= bound;

    let passed = diagonal.iter().all(|c| c.pass) && excursions.pass && segment_visits.pass && lag1_pass;
    Ok(ReversalReport {
        q: kernel.q(),
        explorers: traces.len() as u64,
        diagonal,
        excursions,
        segment_visits,
        lag1_pairs,
        lag1_spearman,
        lag1_pass,
        hwalk_samples: walks.len() as u64,
        hwalk_capped: capped,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hit_probability_solves_the_first_step_equation() {
        // f(x) = P_x[visit L] has f(L) = 1, f(∞) = 0 and is harmonic for the
        // conditioned kernel above L
        for q in [0.5, 0.6, 0.75, 0.9] {
            let k = HWalkKernel::new(q).unwrap();
            let l = 4;
            assert_eq!(k.hit_probability(l, l), 1.0);
            for x in l + 1..200 {
                let up = k.up_probability(x as i64).unwrap();
                let f = |y| k.hit_probability(y, l);
                let res = up * f(x + 1) + (1.0 - up) * f(x - 1) - f(x);
                assert!(res.abs() <= 1e-12 * f(x).max(1e-300), "q={q} x={x} res={res}");
            }
            assert!(k.hit_probability(1000, l) < 0.01);
        }
    }

    #[test]
    fn kernel_domain() {
        assert!(HWalkKernel::new(0.49).is_err());
        assert!(HWalkKernel::new(1.0).is_err());
        let k = HWalkKernel::new(0.5).unwrap();
        assert!(k.up_probability(0).is_err());
        assert!(k.diagonal_tail(0).is_err());
    }

    #[test]
    fn up_probability_examples() {
        let k = HWalkKernel::new(0.5).unwrap();
        assert_eq!(k.up_probability(1).unwrap(), 1.0);
        assert!((k.up_probability(3).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let b = HWalkKernel::new(2.0 / 3.0).unwrap();
        assert!((b.up_probability(1).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn diagonal_tail_examples() {
        let k = HWalkKernel::new(0.5).unwrap();
        assert_eq!(k.diagonal_tail(1).unwrap(), 1.0);
        assert_eq!(k.diagonal_tail(3).unwrap(), 0.5);
        let b = HWalkKernel::new(0.6).unwrap();
        assert!((b.diagonal_tail(2).unwrap() - 0.76).abs() < 1e-14);
        assert!((b.diagonal_tail(1).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn h_is_positive_and_vanishes_at_origin() {
        for q in [0.5, 0.6, 0.9] {
            let k = HWalkKernel::new(q).unwrap();
            assert_eq!(k.h(0), 0.0);
            assert!((1..1000).all(|x| k.h(x) > 0.0));
        }
    }

    #[test]
    fn walk_stays_positive() {
        let k = HWalkKernel::new(0.5).unwrap();
        assert_eq!(sample_h_walk(&k, 1, 9), alloc::vec![0, 1]);
        let p = sample_h_walk(&k, 10_000, 3);
        assert_eq!(p.len(), 10_001);
        assert!(p[1..].iter().all(|&z| z >= 1));
        assert!(p.windows(2).all(|w| w[0].abs_diff(w[1]) == 1));
    }

    #[test]
    fn diagonal_run_frequency() {
        let k = HWalkKernel::new(0.5).unwrap();
        let mut rng = SmallRng::seed_from_u64(17);
        let n = 200_000u64;
        let hits = (0..n).filter(|_| sample_diagonal_run(&k, 4, &mut rng) > 3).count() as u64;
        let (lo, hi) = stats::wilson(hits, n, Z3);
        assert!(lo <= 0.5 && 0.5 <= hi, "{lo} {hi}");
    }

    #[test]
    fn parity_examples() {
        assert_eq!(parity_exact(ParityProcess { p1: 0.5, n: 7 }), 0.5);
        assert_eq!(parity_exact(ParityProcess { p1: 1.0, n: 9 }), 1.0);
        assert_eq!(parity_exact(ParityProcess { p1: 0.75, n: 3 }), 0.5625);
        // 3-fold convolution by enumeration
        let p1: f64 = 0.75;
        let mut even = 0.0f64;
        for mask in 0u32..8 {
            let odd = mask.count_ones();
            if odd % 2 == 0 {
                even += (1.0 - p1).powi(odd as i32) * p1.powi(3 - odd as i32);
            }
        }
        assert!((even - 0.5625).abs() < 1e-15);
    }
}
