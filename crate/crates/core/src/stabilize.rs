//! Stabilization of finite windows and instance-level checks of the
//! least-action, abelian and monotonicity properties.
//!
//! A stabilization region `V` is a sub-window of the configuration's storage
//! window. Only sites of `V` are toppled; particles leaving `V` stay where
//! they land (or are absorbed past the storage window).

use alloc::vec;
use alloc::vec::Vec;

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instructions::InstructionSource;
use crate::pile::{Configuration, Legality, Mode, Odometer, OdometerField, TopplingSequence, Window};

/// Operator applications allowed per stabilization before giving up.
pub const DEFAULT_ITERATION_CAP: u64 = 1_000_000_000;

/// Which unstable site to process next.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Uniformly random unstable site, from the given seed.
    RandomOrder(u64),
    /// Repeated left-to-right passes, each firing every unstable site once.
    LeftToRightSweep,
    /// Most particles first, ties to the leftmost site.
    GreedyMax,
    /// Stack of candidate sites; the fast default.
    Worklist,
}

impl Policy {
    pub const ALL_DETERMINISTIC: [Policy; 3] =
        [Policy::LeftToRightSweep, Policy::GreedyMax, Policy::Worklist];
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stabilization {
    /// `m_{V,η}`: full topplings per site.
    pub odometer: OdometerField,
    /// Number of topplings performed.
    pub steps: u64,
}

struct Engine<'a, S: ?Sized> {
    eta: &'a mut Configuration,
    u: &'a mut Odometer,
    region: Window,
    src: &'a S,
    mode: Mode,
}

impl<S: InstructionSource + ?Sized> Engine<'_, S> {
    #[inline]
    fn unstable(&self, x: i64) -> bool {
        self.region.contains(x)
            && match self.mode {
                Mode::Full => self.eta.unstable_full_unchecked(x),
                Mode::Half => self.eta.unstable_parity_unchecked(self.u, x),
            }
    }

    #[inline]
    fn fire(&mut self, x: i64) -> Result<()> {
        match self.mode {
            Mode::Full => self.eta.topple(self.u, self.src, x).map(drop),
            Mode::Half => self.eta.half_topple(self.u, self.src, x).map(drop),
        }
    }

    fn unstable_sites(&self) -> Vec<i64> {
        self.region.sites().filter(|&x| self.unstable(x)).collect()
    }

    /// Runs `policy` until stable, `limit` operators, or the cap.
    fn run(&mut self, policy: Policy, cap: u64, limit: Option<u64>) -> Result<u64> {
        let budget = limit.unwrap_or(u64::MAX);
        let mut steps = 0u64;
        let tick = |steps: &mut u64| -> Result<bool> {
            if *steps >= budget {
                return Ok(false);
            }
            if *steps >= cap {
                return Err(Error::IterationCap { cap });
            }
            *steps += 1;
            Ok(true)
        };
        match policy {
            Policy::Worklist if self.mode == Mode::Full && limit.is_none() => {
                steps = self.eta.drain_worklist(self.u, self.region, self.src, cap)?;
            }
            Policy::Worklist => {
                let mut stack = self.unstable_sites();
                stack.reverse();
                while let Some(x) = stack.pop() {
                    if !self.unstable(x) {
                        continue;
                    }
                    if !tick(&mut steps)? {
                        break;
                    }
                    self.fire(x)?;
                    for y in [x + 1, x - 1, x] {
                        if self.unstable(y) {
                            stack.push(y);
                        }
                    }
                }
            }
            Policy::RandomOrder(seed) => {
                let mut rng = SmallRng::seed_from_u64(seed);
                let mut set = SiteSet::new(self.region);
                for x in self.unstable_sites() {
                    set.insert(x);
                }
                while !set.is_empty() {
                    let x = set.items[rng.random_range(0..set.items.len())];
                    if !tick(&mut steps)? {
                        break;
                    }
                    self.fire(x)?;
                    for y in [x - 1, x, x + 1] {
                        if self.unstable(y) {
                            set.insert(y);
                        } else {
                            set.remove(y);
                        }
                    }
                }
            }
            Policy::LeftToRightSweep => 'outer: loop {
                let mut fired = false;
                for x in self.region.sites() {
                    if self.unstable(x) {
                        if !tick(&mut steps)? {
                            break 'outer;
                        }
                        self.fire(x)?;
                        fired = true;
                    }
                }
                if !fired {
                    break;
                }
            },
            Policy::GreedyMax => loop {
                let pick = self
                    .region
                    .sites()
                    .filter(|&x| self.unstable(x))
                    .fold(None::<(i64, u32)>, |best, x| {
                        let n = self.eta.count(x);
                        match best {
                            Some((_, m)) if m >= n => best,
                            _ => Some((x, n)),
                        }
                    });
                let Some((x, _)) = pick else { break };
                if !tick(&mut steps)? {
                    break;
                }
                self.fire(x)?;
            },
        }
        Ok(steps)
    }
}

/// Set of sites in a window with O(1) insert, remove and uniform choice.
struct SiteSet {
    window: Window,
    items: Vec<i64>,
    slot: Vec<usize>,
}

impl SiteSet {
    const NONE: usize = usize::MAX;

    fn new(window: Window) -> Self {
        SiteSet {
            window,
            items: Vec::new(),
            slot: vec![Self::NONE; window.len()],
        }
    }

    fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn insert(&mut self, x: i64) {
        if let Some(i) = self.window.index(x) {
            if self.slot[i] == Self::NONE {
                self.slot[i] = self.items.len();
                self.items.push(x);
            }
        }
    }

    fn remove(&mut self, x: i64) {
        let Some(i) = self.window.index(x) else { return };
        let pos = self.slot[i];
        if pos == Self::NONE {
            return;
        }
        self.items.swap_remove(pos);
        if let Some(&moved) = self.items.get(pos) {
            self.slot[self.window.index(moved).unwrap()] = pos;
        }
        self.slot[i] = Self::NONE;
    }
}

fn check_region(eta: &Configuration, region: Window) -> Result<()> {
    if region.is_subset_of(&eta.window()) {
        Ok(())
    } else {
        Err(Error::Precondition(alloc::format!(
            "region [{}, {}] is not inside the storage window [{}, {}]",
            region.lo,
            region.hi,
            eta.window().lo,
            eta.window().hi
        )))
    }
}

/// Legally stabilizes `eta` inside `region`, returning `m_{V,η}`.
pub fn stabilize<S: InstructionSource + ?Sized>(
    eta: &mut Configuration,
    region: Window,
    src: &S,
    policy: Policy,
) -> Result<Stabilization> {
    stabilize_capped(eta, region, src, policy, DEFAULT_ITERATION_CAP)
}

pub fn stabilize_capped<S: InstructionSource + ?Sized>(
    eta: &mut Configuration,
    region: Window,
    src: &S,
    policy: Policy,
    cap: u64,
) -> Result<Stabilization> {
    let mut u = Odometer::new(eta.window());
    let steps = stabilize_with(eta, &mut u, region, src, policy, cap)?;
    Ok(Stabilization {
        odometer: u.toppling_field(),
        steps,
    })
}

/// Continues a legal stabilization from odometer `u` (full topplings only).
pub fn stabilize_with<S: InstructionSource + ?Sized>(
    eta: &mut Configuration,
    u: &mut Odometer,
    region: Window,
    src: &S,
    policy: Policy,
    cap: u64,
) -> Result<u64> {
    check_region(eta, region)?;
    Engine { eta, u, region, src, mode: Mode::Full }.run(policy, cap, None)
}

/// Legal half-toppling stabilization: afterwards every site of `region` is
/// empty or holds one particle with an even half-toppling count.
pub fn stabilize_parity<S: InstructionSource + ?Sized>(
    eta: &mut Configuration,
    u: &mut Odometer,
    region: Window,
    src: &S,
    policy: Policy,
) -> Result<u64> {
    check_region(eta, region)?;
    Engine { eta, u, region, src, mode: Mode::Half }.run(policy, DEFAULT_ITERATION_CAP, None)
}

/// A random legal sequence of at most `max_steps` operators (full topplings
/// or half-topplings per `mode`) inside `region`. Returns its length.
pub fn random_legal_prefix<S: InstructionSource + ?Sized>(
    eta: &mut Configuration,
    u: &mut Odometer,
    region: Window,
    src: &S,
    mode: Mode,
    seed: u64,
    max_steps: u64,
) -> Result<u64> {
    check_region(eta, region)?;
    Engine { eta, u, region, src, mode }.run(Policy::RandomOrder(seed), DEFAULT_ITERATION_CAP, Some(max_steps))
}

/// A random semi-legal half-toppling sequence that stabilizes `region`.
///
/// Up to `extra` half-topplings are spent on stable occupied sites, each
/// chosen with probability 1/4 at a step; the rest are legal. Returns the
/// sequence length.
pub fn random_semi_legal_stabilization<S: InstructionSource + ?Sized>(
    eta: &mut Configuration,
    u: &mut Odometer,
    region: Window,
    src: &S,
    seed: u64,
    extra: u64,
) -> Result<u64> {
    check_region(eta, region)?;
    let mut rng = SmallRng::seed_from_u64(seed);
    let mut remaining = extra;
    let mut steps = 0u64;
    loop {
        if steps >= DEFAULT_ITERATION_CAP {
            return Err(Error::IterationCap { cap: DEFAULT_ITERATION_CAP });
        }
        if remaining > 0 && rng.random_ratio(1, 4) {
            let occupied: Vec<i64> = region.sites().filter(|&x| eta.count(x) >= 1).collect();
            if !occupied.is_empty() {
                let x = occupied[rng.random_range(0..occupied.len())];
                eta.half_topple(u, src, x)?;
                remaining -= 1;
                steps += 1;
                continue;
            }
        }
        let unstable: Vec<i64> = region
            .sites()
            .filter(|&x| eta.unstable_parity_unchecked(u, x))
            .collect();
        if unstable.is_empty() {
            return Ok(steps);
        }
        let x = unstable[rng.random_range(0..unstable.len())];
        eta.half_topple(u, src, x)?;
        steps += 1;
    }
}

/// Odometer at `site` for the nested windows `[-r, r]`, `r ∈ radii`.
///
/// The windows are stabilized incrementally on one copy of `eta`: a legal
/// stabilization of a smaller window extends to one of the larger window, so
/// each entry is `m_{V_r,η}(site)`. The output is non-decreasing.
pub fn odometer_window_limit<S: InstructionSource + ?Sized>(
    eta: &Configuration,
    radii: &[u64],
    src: &S,
    site: i64,
) -> Result<Vec<u64>> {
    if radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition("radii must be strictly increasing".into()));
    }
    let mut eta = eta.clone();
    let mut u = Odometer::new(eta.window());
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        stabilize_with(&mut eta, &mut u, Window::centered(r), src, Policy::Worklist, DEFAULT_ITERATION_CAP)?;
        out.push(u.topplings(site));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lemma {
    /// Stabilizing odometers and final states agree across policies.
    Abelian,
    /// A legal sequence inside `V` never exceeds a stabilizing one.
    LeastAction,
    /// `m_{V,η} ≤ m_{V',η'}` for `V ⊆ V'`, `η ≤ η'`.
    Monotonicity,
    /// Legal half-toppling sequences never exceed semi-legal stabilizing ones.
    HalfLeastAction,
    /// `Φ_x = φ_x φ_x` along a sequence, and `m_β = ½ m̃_{β²}`.
    HalfCalculus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub instance: u64,
    pub site: i64,
    pub lhs: u64,
    pub rhs: u64,
}

/// Outcome of a batch of checks for one lemma. Reports merge associatively.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lemma: Lemma,
    pub instances: u64,
    pub violations: Vec<Violation>,
    pub max_window: u64,
    pub seed: u64,
}

impl LemmaReport {
    pub fn new(lemma: Lemma, seed: u64) -> Self {
        LemmaReport {
            lemma,
            instances: 0,
            violations: Vec::new(),
            max_window: 0,
            seed,
        }
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn record(&mut self, window: Window, violation: Option<Violation>) {
        self.instances += 1;
        self.max_window = self.max_window.max(window.len() as u64);
        self.violations.extend(violation);
    }

    pub fn merge(mut self, other: LemmaReport) -> LemmaReport {
        debug_assert_eq!(self.lemma, other.lemma);
        self.instances += other.instances;
        self.violations.extend(other.violations);
        self.max_window = self.max_window.max(other.max_window);
        self
    }
}

fn excess(instance: u64, lhs: &OdometerField, rhs: &OdometerField) -> Option<Violation> {
    lhs.first_excess_over(rhs).map(|(site, l, r)| Violation {
        instance,
        site,
        lhs: l,
        rhs: r,
    })
}

/// Stabilizes `eta` in `region` under every policy and compares odometers and
/// final configurations with the first one.
pub fn check_abelian<S: InstructionSource + ?Sized>(
    eta: &Configuration,
    region: Window,
    src: &S,
    policies: &[Policy],
    instance: u64,
) -> Result<Option<Violation>> {
    let mut reference: Option<(Configuration, Stabilization)> = None;
    for &p in policies {
        let mut e = eta.clone();
        let s = stabilize(&mut e, region, src, p)?;
        match &reference {
            None => reference = Some((e, s)),
            Some((e0, s0)) => {
                if let Some(v) = excess(instance, &s.odometer, &s0.odometer)
                    .or_else(|| excess(instance, &s0.odometer, &s.odometer))
                {
                    return Ok(Some(v));
                }
                if let Some(x) = e.window().sites().find(|&x| e.count(x) != e0.count(x)) {
                    return Ok(Some(Violation {
                        instance,
                        site: x,
                        lhs: e.count(x).into(),
                        rhs: e0.count(x).into(),
                    }));
                }
            }
        }
    }
    Ok(None)
}

/// Samples `trials` random legal partial sequences `β` inside `region` and
/// checks `m_β ≤ m_α` against a stabilizing `α`.
pub fn verify_least_action<S: InstructionSource + ?Sized>(
    eta: &Configuration,
    region: Window,
    src: &S,
    trials: u64,
    seed: u64,
) -> Result<LemmaReport> {
    let mut report = LemmaReport::new(Lemma::LeastAction, seed);
    let mut alpha_eta = eta.clone();
    let alpha = stabilize(&mut alpha_eta, region, src, Policy::Worklist)?;
    let mut rng = SmallRng::seed_from_u64(seed);
    for t in 0..trials {
        let len = rng.random_range(0..=alpha.steps);
        let mut e = eta.clone();
        let mut u = Odometer::new(e.window());
        random_legal_prefix(&mut e, &mut u, region, src, Mode::Full, rng.random(), len)?;
        report.record(region, excess(t, &u.toppling_field(), &alpha.odometer));
    }
    Ok(report)
}

/// Checks `m_{V,η} ≤ m_{V',η'}` on one instance.
pub fn verify_monotonicity<S: InstructionSource + ?Sized>(
    eta: &Configuration,
    eta_big: &Configuration,
    region: Window,
    region_big: Window,
    src: &S,
) -> Result<LemmaReport> {
    if !region.is_subset_of(&region_big) {
        return Err(Error::Precondition("V is not contained in V'".into()));
    }
    if !eta.le(eta_big) {
        return Err(Error::Precondition("η ≤ η' fails".into()));
    }
    let small = stabilize(&mut eta.clone(), region, src, Policy::Worklist)?;
    let big = stabilize(&mut eta_big.clone(), region_big, src, Policy::Worklist)?;
    let mut report = LemmaReport::new(Lemma::Monotonicity, 0);
    report.record(region_big, excess(0, &small.odometer, &big.odometer));
    Ok(report)
}

/// Samples legal half-toppling prefixes `β` and semi-legal stabilizing `α`
/// (with up to `extra` semi-legal moves) and checks `m̃_β ≤ m̃_α`.
pub fn verify_half_least_action<S: InstructionSource + ?Sized>(
    eta: &Configuration,
    region: Window,
    src: &S,
    trials: u64,
    extra: u64,
    seed: u64,
) -> Result<LemmaReport> {
    let mut report = LemmaReport::new(Lemma::HalfLeastAction, seed);
    let mut rng = SmallRng::seed_from_u64(seed);
    // legal half-toppling stabilization has a fixed length
    let full_len = {
        let mut e = eta.clone();
        let mut u = Odometer::new(e.window());
        stabilize_parity(&mut e, &mut u, region, src, Policy::Worklist)?
    };
    for t in 0..trials {
        let mut eb = eta.clone();
        let mut ub = Odometer::new(eb.window());
        let len = rng.random_range(0..=full_len);
        random_legal_prefix(&mut eb, &mut ub, region, src, Mode::Half, rng.random(), len)?;

        let mut ea = eta.clone();
        let mut ua = Odometer::new(ea.window());
        random_semi_legal_stabilization(&mut ea, &mut ua, region, src, rng.random(), extra)?;

        report.record(
            region,
            excess(t, &ub.half_toppling_field(), &ua.half_toppling_field()),
        );
    }
    Ok(report)
}

/// A random legal full-toppling sequence inside `region` of length at most
/// `max_len` (shorter only if `eta` stabilizes first). `eta` is not changed.
pub fn random_legal_sequence<S: InstructionSource + ?Sized>(
    eta: &Configuration,
    region: Window,
    src: &S,
    seed: u64,
    max_len: usize,
) -> Result<TopplingSequence> {
    check_region(eta, region)?;
    let mut e = eta.clone();
    let mut u = Odometer::new(e.window());
    let mut rng = SmallRng::seed_from_u64(seed);
    let mut sites = Vec::new();
    while sites.len() < max_len {
        let unstable: Vec<i64> = region.sites().filter(|&x| e.unstable_full_unchecked(x)).collect();
        if unstable.is_empty() {
            break;
        }
        let x = unstable[rng.random_range(0..unstable.len())];
        e.topple(&mut u, src, x)?;
        sites.push(x);
    }
    Ok(TopplingSequence::new(Mode::Full, sites))
}

/// Applies the legal full sequence `beta` and its doubling `β²` as legal
/// half-topplings to copies of `eta`. Final configurations and odometers must
/// agree and `m̃_{β²} = 2 m_β`. Reports the first disagreeing site.
pub fn check_half_calculus<S: InstructionSource + ?Sized>(
    eta: &Configuration,
    beta: &TopplingSequence,
    src: &S,
    instance: u64,
) -> Result<Option<Violation>> {
    let (mut e1, mut e2) = (eta.clone(), eta.clone());
    let (mut u1, mut u2) = (Odometer::new(eta.window()), Odometer::new(eta.window()));
    let m = e1.apply_sequence(&mut u1, src, beta, Legality::Legal)?;
    let m2 = e2.apply_sequence(&mut u2, src, &beta.doubled(), Legality::Legal)?;
    let twice = m.scaled(2);
    let bad = eta.window().sites().find(|&x| {
        e1.count(x) != e2.count(x) || u1.get(x) != u2.get(x) || twice.get(x) != m2.get(x)
    });
    let violation = match bad {
        Some(x) => Some(Violation { instance, site: x, lhs: m2.get(x), rhs: twice.get(x) }),
        None if (e1.absorbed_left(), e1.absorbed_right()) != (e2.absorbed_left(), e2.absorbed_right()) => {
            Some(Violation { instance, site: eta.window().lo - 1, lhs: e2.absorbed_left(), rhs: e1.absorbed_left() })
        }
        None => None,
    };
    Ok(violation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::InitialLaw;
    use crate::instructions::InstructionField;

    fn all_policies(seed: u64) -> [Policy; 4] {
        [
            Policy::RandomOrder(seed),
            Policy::LeftToRightSweep,
            Policy::GreedyMax,
            Policy::Worklist,
        ]
    }

    #[test]
    fn single_site_two_particles() {
        for seed in 0..50 {
            let field = InstructionField::new(seed, 0.5).unwrap();
            let w = Window::new(0, 0).unwrap();
            let mut eta = Configuration::from_counts(w, vec![2]).unwrap();
            let s = stabilize(&mut eta, w, &field, Policy::Worklist).unwrap();
            assert_eq!(s.odometer.get(0), 1);
            assert_eq!(s.steps, 1);
            assert_eq!(eta.total_mass(), 2);
        }
    }

    #[test]
    fn empty_configuration_needs_nothing() {
        let field = InstructionField::new(1, 0.5).unwrap();
        let w = Window::centered(5);
        for p in all_policies(3) {
            let mut eta = Configuration::empty(w);
            let s = stabilize(&mut eta, w, &field, p).unwrap();
            assert_eq!(s.steps, 0);
            assert_eq!(s.odometer.total(), 0);
        }
    }

    #[test]
    fn two_site_window_policy_independent() {
        let w = Window::new(0, 1).unwrap();
        for seed in 0..200 {
            let field = InstructionField::new(seed, 0.5).unwrap();
            let eta = Configuration::from_counts(w, vec![2, 1]).unwrap();
            let mut a = eta.clone();
            let mut b = eta.clone();
            let ra = stabilize(&mut a, w, &field, Policy::RandomOrder(seed ^ 77)).unwrap();
            let rb = stabilize(&mut b, w, &field, Policy::LeftToRightSweep).unwrap();
            assert_eq!(ra, rb);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn stabilized_windows_are_stable() {
        let field = InstructionField::new(12, 0.4).unwrap();
        let w = Window::centered(20);
        let mut eta = InitialLaw::Poisson(0.9).sample(w, 5).unwrap();
        let mass = eta.total_mass();
        stabilize(&mut eta, w, &field, Policy::Worklist).unwrap();
        assert!(w.sites().all(|x| eta.count(x) <= 1));
        assert_eq!(eta.total_mass(), mass);
    }

    #[test]
    fn abelian_on_random_instances() {
        for i in 0..100u64 {
            let field = InstructionField::new(i, 0.5).unwrap();
            let w = Window::centered(1 + i % 15);
            let eta = InitialLaw::Poisson(0.9).sample(w, i + 1000).unwrap();
            let v = check_abelian(&eta, w, &field, &all_policies(i), i).unwrap();
            assert_eq!(v, None);
        }
    }

    #[test]
    fn parity_stabilization_predicate() {
        let field = InstructionField::new(21, 0.5).unwrap();
        let w = Window::centered(20);
        let mut eta = InitialLaw::Bernoulli(0.5).sample(w, 2).unwrap();
        let mut u = Odometer::new(w);
        stabilize_parity(&mut eta, &mut u, w, &field, Policy::RandomOrder(4)).unwrap();
        for x in w.sites() {
            let n = eta.count(x);
            assert!(n == 0 || (n == 1 && !u.is_odd(x)), "site {x}: {n}, u = {}", u.get(x));
        }
    }

    #[test]
    fn parity_single_odd_site() {
        for seed in 0..20 {
            let field = InstructionField::new(seed, 0.5).unwrap();
            let w = Window::new(0, 0).unwrap();
            let mut eta = Configuration::from_counts(w, vec![1]).unwrap();
            let mut u = Odometer::new(w);
            // one semi-legal half-toppling leaves u(0) = 1 with the particle gone
            eta.half_topple(&mut u, &field, 0).unwrap();
            eta.add_particle(0).unwrap();
            let steps = stabilize_parity(&mut eta, &mut u, w, &field, Policy::Worklist).unwrap();
            assert_eq!(steps, 1);
            assert_eq!(eta.count(0), 0);
        }
    }

    #[test]
    fn parity_noop_on_empty() {
        let field = InstructionField::new(2, 0.5).unwrap();
        let w = Window::centered(3);
        let mut eta = Configuration::empty(w);
        let mut u = Odometer::new(w);
        assert_eq!(stabilize_parity(&mut eta, &mut u, w, &field, Policy::GreedyMax).unwrap(), 0);
    }

    #[test]
    fn least_action_trivial_cases() {
        let field = InstructionField::new(6, 0.5).unwrap();
        let w = Window::centered(8);
        let eta = InitialLaw::Poisson(0.9).sample(w, 6).unwrap();
        let mut alpha_eta = eta.clone();
        let alpha = stabilize(&mut alpha_eta, w, &field, Policy::Worklist).unwrap();
        // β = α under a different order
        let mut e = eta.clone();
        let mut u = Odometer::new(w);
        let n = random_legal_prefix(&mut e, &mut u, w, &field, Mode::Full, 9, u64::MAX).unwrap();
        assert_eq!(n, alpha.steps);
        assert_eq!(u.toppling_field(), alpha.odometer);
        // β empty
        assert!(OdometerField::zeros(w).le(&alpha.odometer));
    }

    #[test]
    fn least_action_sampled() {
        for i in 0..100u64 {
            let field = InstructionField::new(i, 0.5).unwrap();
            let w = Window::centered(2 + i % 10);
            let eta = InitialLaw::Poisson(0.6).sample(w, i).unwrap();
            let r = verify_least_action(&eta, w, &field, 5, i).unwrap();
            assert!(r.passed(), "{r:?}");
            assert_eq!(r.instances, 5);
        }
    }

    #[test]
    fn monotonicity_cases() {
        let field = InstructionField::new(4, 0.5).unwrap();
        let w = Window::centered(10);
        let eta = InitialLaw::Poisson(0.8).sample(w, 4).unwrap();
        assert!(verify_monotonicity(&eta, &eta, w, w, &field).unwrap().passed());
        let mut more = eta.clone();
        more.add_particle(3).unwrap();
        assert!(verify_monotonicity(&eta, &more, w, w, &field).unwrap().passed());
        let wider = Window::new(-10, 11).unwrap();
        let mut wide_eta = Configuration::empty(wider);
        for x in w.sites() {
            wide_eta.set(x, eta.count(x)).unwrap();
        }
        assert!(verify_monotonicity(&eta, &wide_eta, w, wider, &field).unwrap().passed());
    }

    #[test]
    fn monotonicity_preconditions() {
        let field = InstructionField::new(4, 0.5).unwrap();
        let w = Window::centered(3);
        let eta = Configuration::from_counts(w, vec![0, 0, 0, 2, 0, 0, 0]).unwrap();
        let less = Configuration::empty(w);
        assert!(matches!(
            verify_monotonicity(&eta, &less, w, w, &field),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            verify_monotonicity(&eta, &eta, w, Window::centered(1), &field),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn half_least_action_sampled() {
        for i in 0..60u64 {
            let field = InstructionField::new(i, 0.5).unwrap();
            let w = Window::centered(2 + i % 8);
            let eta = InitialLaw::Poisson(0.6).sample(w, i).unwrap();
            let r = verify_half_least_action(&eta, w, &field, 4, 6, i).unwrap();
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn window_limit_single_pair() {
        for seed in 0..30 {
            let field = InstructionField::new(seed, 0.5).unwrap();
            let w = Window::centered(4);
            let mut eta = Configuration::empty(w);
            eta.set(0, 2).unwrap();
            let m = odometer_window_limit(&eta, &[0, 1, 2, 4], &field, 0).unwrap();
            assert_eq!(m[0], 1);
            assert!(m.windows(2).all(|p| p[0] <= p[1]));
        }
    }

    #[test]
    fn window_limit_matches_direct() {
        let field = InstructionField::new(31, 0.5).unwrap();
        let w = Window::centered(40);
        let eta = InitialLaw::Poisson(1.2).sample(w, 31).unwrap();
        let radii = [5, 10, 20, 40];
        let inc = odometer_window_limit(&eta, &radii, &field, 0).unwrap();
        assert!(inc.windows(2).all(|p| p[0] <= p[1]));
        for (k, &r) in radii.iter().enumerate() {
            let direct = stabilize(&mut eta.clone(), Window::centered(r), &field, Policy::GreedyMax).unwrap();
            assert_eq!(direct.odometer.get(0), inc[k]);
        }
        let zero = Configuration::empty(w);
        assert_eq!(odometer_window_limit(&zero, &radii, &field, 0).unwrap(), vec![0; 4]);
        assert!(odometer_window_limit(&eta, &[5, 5], &field, 0).is_err());
    }

    #[test]
    fn iteration_cap_reported() {
        let field = InstructionField::new(1, 0.5).unwrap();
        let w = Window::centered(30);
        let mut eta = InitialLaw::Poisson(1.5).sample(w, 1).unwrap();
        assert_eq!(
            stabilize_capped(&mut eta, w, &field, Policy::Worklist, 3),
            Err(Error::IterationCap { cap: 3 })
        );
    }

    #[test]
    fn report_merge() {
        let w = Window::centered(2);
        let mut a = LemmaReport::new(Lemma::Abelian, 1);
        a.record(w, None);
        let mut b = LemmaReport::new(Lemma::Abelian, 1);
        b.record(Window::centered(4), Some(Violation { instance: 3, site: 0, lhs: 2, rhs: 1 }));
        let m = a.merge(b);
        assert_eq!(m.instances, 2);
        assert_eq!(m.max_window, 9);
        assert!(!m.passed());
    }

    #[test]
    fn half_calculus_on_random_sequences() {
        let w = Window::centered(12);
        for seed in 0..40 {
            let field = InstructionField::new(seed, 0.6).unwrap();
            let eta = InitialLaw::Poisson(0.9).sample(w, seed).unwrap();
            let beta = random_legal_sequence(&eta, w, &field, seed, 200).unwrap();
            assert!(beta.sites.iter().all(|&x| w.contains(x)));
            assert_eq!(check_half_calculus(&eta, &beta, &field, seed).unwrap(), None);
        }
    }

    #[test]
    fn random_sequence_stops_at_stability() {
        let w = Window::centered(3);
        let field = InstructionField::new(2, 0.5).unwrap();
        let eta = Configuration::from_counts(w, vec![0, 0, 0, 2, 0, 0, 0]).unwrap();
        let beta = random_legal_sequence(&eta, w, &field, 0, 100).unwrap();
        let mut e = eta.clone();
        let st = stabilize(&mut e, w, &field, Policy::LeftToRightSweep).unwrap();
        assert_eq!(beta.len() as u64, st.steps);
    }
}
