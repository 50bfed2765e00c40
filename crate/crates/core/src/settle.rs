//! Explorer/trap settling on the positive half-line, and its replay by
//! semi-legal half-topplings.
//!
//! Particles start at `0 < x_1 < x_2 < …`; barriers start at `b_0 = 0`. Explorer
//! `k` starts at `x_k` and follows unrevealed instructions (skipping those
//! revealed by earlier explorers) until it first hits `b_{k-1}`. Every visit,
//! endpoints included, toggles a cumulative parity bit at its site. Then
//!
//! * `a_k` is the least site `> b_{k-1}` with odd cumulative parity,
//! * `θ_k` is the last time the path lands after a right step and
//!   `c_k = X_{θ_k}`,
//! * `b_k = min(a_k, c_k)`; the step fails if both exceed `x_k`.
//!
//! Requires `q ≥ ½`; callers reflect the field otherwise.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ReplayViolation, Result};
use crate::ext::Extended;
use crate::init::bernoulli_positions;
use crate::instructions::{derive_seed, Direction, InstructionSource};
use crate::pile::{Configuration, Odometer, Window};
use crate::stabilize::{stabilize, Policy};

/// Steps allowed per explorer.
pub const EXPLORER_STEP_CAP: u64 = 100_000_000;

/// Salt for the initial-position stream of a settlement seed.
const POSITION_STREAM: u64 = 0x5e_771e;

/// Sequence of ±1 steps packed one bit per step (set = right).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Path {
    words: Vec<u64>,
    len: u64,
}

impl Path {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_steps(steps: &[Direction]) -> Self {
        let mut p = Path::new();
        for &d in steps {
            p.push(d);
        }
        p
    }

    #[inline]
    pub fn push(&mut self, d: Direction) {
        let (w, b) = ((self.len / 64) as usize, self.len % 64);
        if b == 0 {
            self.words.push(0);
        }
        if d == Direction::Right {
            self.words[w] |= 1 << b;
        }
        self.len += 1;
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Step `n` (0-based): the move from `X_n` to `X_{n+1}`.
    #[inline]
    pub fn get(&self, n: u64) -> Direction {
        assert!(n < self.len);
        if self.words[(n / 64) as usize] >> (n % 64) & 1 == 1 {
            Direction::Right
        } else {
            Direction::Left
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Direction> + '_ {
        (0..self.len).map(|n| self.get(n))
    }

    /// Positions `X_0 = start, X_1, …, X_len`.
    pub fn positions(&self, start: i64) -> impl Iterator<Item = i64> + '_ {
        core::iter::once(start).chain(self.iter().scan(start, |x, d| {
            *x += d.step();
            Some(*x)
        }))
    }

    /// Number of final steps equal to `d`.
    pub fn trailing(&self, d: Direction) -> u64 {
        (0..self.len).rev().take_while(|&n| self.get(n) == d).count() as u64
    }
}

/// How `c_k` is defined for a path without right steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoRightJump {
    /// `θ = 0`, `c = x_k`. The replay can then leave `x_k` parity-unstable.
    StartSite,
    /// `c = +∞`: the trap must come from the parity rule.
    Unbounded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettleOptions {
    pub no_right_jump: NoRightJump,
    pub step_cap: u64,
}

impl Default for SettleOptions {
    fn default() -> Self {
        SettleOptions {
            no_right_jump: NoRightJump::Unbounded,
            step_cap: EXPLORER_STEP_CAP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorerTrace {
    /// `k`, 1-based.
    pub index: usize,
    /// `x_k`.
    pub start: i64,
    /// `b_{k-1}`, the site the path ends at.
    pub barrier: i64,
    pub path: Path,
    /// `τ_k`; equals `path.len()`.
    pub tau: u64,
    /// `θ_k`; 0 when the path never steps right.
    pub theta: u64,
    pub a: Extended<i64>,
    pub c: Extended<i64>,
    pub b: Extended<i64>,
    /// Rightmost site visited.
    pub max_site: i64,
}

impl ExplorerTrace {
    pub fn positions(&self) -> impl Iterator<Item = i64> + '_ {
        self.path.positions(self.start)
    }

    /// Whether the trap was placed by the `c` rule (ties go to `c`).
    pub fn is_c_trap(&self) -> bool {
        self.b.is_finite() && self.b == self.c
    }

    pub fn a_minus_b(&self) -> Extended<i64> {
        self.a.map(|a| a - self.barrier)
    }

    pub fn c_minus_b(&self) -> Extended<i64> {
        self.c.map(|c| c - self.barrier)
    }
}

/// Cumulative visit parity per site `≥ 0`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParityField {
    words: Vec<u64>,
}

impl ParityField {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn toggle(&mut self, x: i64) {
        let x = x as usize;
        if x / 64 >= self.words.len() {
            self.words.resize(x / 64 + 1, 0);
        }
        self.words[x / 64] ^= 1 << (x % 64);
    }

    pub fn is_odd(&self, x: i64) -> bool {
        let x = x as usize;
        self.words.get(x / 64).is_some_and(|w| w >> (x % 64) & 1 == 1)
    }

    /// Least site `> b` with odd parity.
    pub fn first_odd_after(&self, b: i64) -> Option<i64> {
        let start = (b + 1) as usize;
        let mut w = start / 64;
        let mut word = *self.words.get(w)? & (u64::MAX << (start % 64));
        loop {
            if word != 0 {
                return Some((w * 64) as i64 + word.trailing_zeros() as i64);
            }
            w += 1;
            word = *self.words.get(w)?;
        }
    }
}

/// Per-site explorer state: the reveal count plus a cache of upcoming
/// instructions, generated 64 at a time so hashing stays off the step-to-step
/// dependency chain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct SiteState {
    revealed: u64,
    key: u64,
    /// Instructions `revealed + 1 ..= revealed + buffered`, one bit each.
    upcoming: u64,
    buffered: u32,
}

/// Number of instructions revealed so far per site `≥ 0`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RevealLedger {
    sites: Vec<SiteState>,
}

impl RevealLedger {
    pub fn get(&self, x: i64) -> u64 {
        self.sites.get(x as usize).map_or(0, |s| s.revealed)
    }

    /// Sites `0..len()` may have been revealed at.
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Grows to cover `x` with headroom.
    fn reserve<S: InstructionSource + ?Sized>(&mut self, src: &S, x: i64) {
        let old = self.sites.len();
        if (x as usize) < old {
            return;
        }
        let new = (x as usize + 1).max(2 * old).max(64);
        self.sites.extend((old..new).map(|y| SiteState {
            key: src.site_key(y as i64),
            ..SiteState::default()
        }));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettlementStatus {
    Running,
    /// All of the given number of particles were settled.
    Succeeded(usize),
    /// The step settling particle `k` failed.
    Failed(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Settlement {
    /// `x_1 < x_2 < …`, at least `budget` of them.
    pub positions: Vec<i64>,
    pub budget: usize,
    /// `b_0 = 0, b_1, …`; a failed step contributes `+∞`.
    pub barriers: Vec<Extended<i64>>,
    pub traces: Vec<ExplorerTrace>,
    pub status: SettlementStatus,
    pub options: SettleOptions,
    reveals: RevealLedger,
}

impl Settlement {
    pub fn new(positions: Vec<i64>, budget: usize, options: SettleOptions) -> Result<Self> {
        if positions.len() < budget {
            return Err(Error::InsufficientParticles {
                found: positions.len(),
                needed: budget,
            });
        }
        if positions.first().is_some_and(|&x| x <= 0) || positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "particle positions must be positive and strictly increasing".into(),
            ));
        }
        Ok(Settlement {
            positions,
            budget,
            barriers: vec![Extended::Finite(0)],
            traces: Vec::new(),
            status: SettlementStatus::Running,
            options,
            reveals: RevealLedger::default(),
        })
    }

    /// Cumulative visit parity over all completed explorers.
    ///
    /// Every visit except an explorer's final one (at its barrier) is
    /// followed by a reveal at the same site, so the parity at `x` is the
    /// reveal count at `x` plus the number of explorers that ended at `x`.
    pub fn parity(&self) -> ParityField {
        let mut p = ParityField::new();
        for (x, s) in self.reveals.sites.iter().enumerate() {
            if s.revealed % 2 == 1 {
                p.toggle(x as i64);
            }
        }
        for t in &self.traces {
            p.toggle(t.barrier);
        }
        p
    }

    pub fn reveals(&self) -> &RevealLedger {
        &self.reveals
    }

    pub fn succeeded(&self) -> bool {
        matches!(self.status, SettlementStatus::Succeeded(_))
    }

    /// Last finite barrier.
    pub fn last_barrier(&self) -> i64 {
        self.barriers
            .iter()
            .rev()
            .find_map(|b| b.finite())
            .unwrap_or(0)
    }

    /// Runs explorer `k = traces.len() + 1`, updating the reveal ledger, and
    /// computes its traps. Does not record the trace.
    pub fn explore<S: InstructionSource + ?Sized>(&mut self, src: &S) -> Result<ExplorerTrace> {
        if self.status != SettlementStatus::Running {
            return Err(Error::Precondition("settlement is not running".into()));
        }
        debug_assert!(src.left_probability() >= 0.5);
        let k = self.traces.len() + 1;
        let start = self.positions[k - 1];
        let barrier = self.last_barrier();
        let cap = self.options.step_cap;
        let (mut words, mut n) = (Vec::new(), 0u64);
        let mut walk = Walk { x: start, theta: 0, max_site: start };
        while walk.x != barrier {
            if n == cap {
                return Err(Error::ExplorerCap { explorer: k, cap });
            }
            // a chunk moves at most 64 sites right, so it never runs off
            self.reveals.reserve(src, walk.x + 64);
            let limit = (cap - n).min(64) as u32;
            let (bits, taken) = walk.chunk(&mut self.reveals.sites, src, barrier, n, limit);
            words.push(bits);
            n += u64::from(taken);
        }
        let Walk { theta, max_site, .. } = walk;
        let path = Path { words, len: n };
        let inf = Extended::Infinite;
        let mut t = ExplorerTrace { index: k, start, barrier, path, tau: n, theta, a: inf, c: inf, b: inf, max_site };
        let mut parity = self.parity();
        parity.toggle(barrier);
        (t.a, t.c, t.b) = compute_traps(&t, &parity, barrier, self.options.no_right_jump);
        Ok(t)
    }

    /// Explores and places the next trap. Returns the new status.
    pub fn step<S: InstructionSource + ?Sized>(&mut self, src: &S) -> Result<SettlementStatus> {
        if self.traces.len() == self.budget {
            self.status = SettlementStatus::Succeeded(self.budget);
            return Ok(self.status);
        }
        let trace = self.explore(src)?;
        let k = trace.index;
        let x = Extended::Finite(trace.start);
        if trace.a > x && trace.c > x {
            self.barriers.push(Extended::Infinite);
            self.status = SettlementStatus::Failed(k);
        } else {
            self.barriers.push(trace.b);
            if k == self.budget {
                self.status = SettlementStatus::Succeeded(k);
            }
        }
        self.traces.push(trace);
        Ok(self.status)
    }

    /// Runs steps until success or failure.
    pub fn run<S: InstructionSource + ?Sized>(&mut self, src: &S) -> Result<SettlementStatus> {
        while self.status == SettlementStatus::Running {
            self.step(src)?;
        }
        Ok(self.status)
    }
}

struct Walk {
    x: i64,
    theta: u64,
    max_site: i64,
}

impl Walk {
    /// Takes at most `limit ≤ 64` steps, stopping early only at `barrier`.
    /// Requires `x + limit < sites.len()`. Returns the step bits (set = right) and the count. `n0` is
    /// the number of steps before the chunk.
    #[inline(never)]
    fn chunk<S: InstructionSource + ?Sized>(
        &mut self,
        sites: &mut [SiteState],
        src: &S,
        barrier: i64,
        n0: u64,
        limit: u32,
    ) -> (u64, u32) {
        let (mut x, mut theta, mut max_site) = (self.x, self.theta, self.max_site);
        debug_assert!(x + i64::from(limit) < sites.len() as i64);
        let (mut bits, mut b) = (0u64, 0u32);
        while b < limit && x != barrier {
            let st = &mut sites[x as usize];
            if st.buffered == 0 {
                refill(src, st, x);
            }
            let bit = st.upcoming & 1;
            st.upcoming >>= 1;
            st.buffered -= 1;
            st.revealed += 1;
            bits |= bit << b;
            b += 1;
            // branch-free: the step direction is a coin flip
            x += 2 * bit as i64 - 1;
            theta = if bit == 1 { n0 + u64::from(b) } else { theta };
            max_site = max_site.max(x);
        }
        (self.x, self.theta, self.max_site) = (x, theta, max_site);
        (bits, b)
    }
}

/// Kept out of line so the explorer loop keeps its state in registers.
#[inline(never)]
fn refill<S: InstructionSource + ?Sized>(src: &S, st: &mut SiteState, x: i64) {
    st.upcoming = src.instruction_bits(st.key, x, st.revealed + 1);
    st.buffered = 64;
}

/// The traps `(a, c, b)` of `trace` given the cumulative parity (which must
/// already include `trace`).
pub fn compute_traps(
    trace: &ExplorerTrace,
    parity: &ParityField,
    b_prev: i64,
    no_right_jump: NoRightJump,
) -> (Extended<i64>, Extended<i64>, Extended<i64>) {
    let a = parity.first_odd_after(b_prev).map_or(Extended::Infinite, Extended::Finite);
    let c = if trace.theta == 0 {
        match no_right_jump {
            NoRightJump::StartSite => Extended::Finite(trace.start),
            NoRightJump::Unbounded => Extended::Infinite,
        }
    } else {
        Extended::Finite(trace.positions().nth(trace.theta as usize).unwrap())
    };
    (a, c, a.min(c))
}

/// Settles the first `budget` particles of a Bernoulli(`zeta`) configuration on
/// `1..=window`. `src` must have `q ≥ ½`.
pub fn settle<S: InstructionSource + ?Sized>(
    zeta: f64,
    src: &S,
    seed: u64,
    budget: usize,
    window: u64,
    options: SettleOptions,
) -> Result<Settlement> {
    if src.left_probability() < 0.5 {
        return Err(Error::Precondition("settling needs q >= 1/2; reflect the field".into()));
    }
    let mut positions = bernoulli_positions(zeta, window, derive_seed(seed, POSITION_STREAM))?;
    if positions.len() < budget {
        return Err(Error::InsufficientParticles { found: positions.len(), needed: budget });
    }
    positions.truncate(budget);
    let mut s = Settlement::new(positions, budget, options)?;
    s.run(src)?;
    Ok(s)
}

/// Result of replaying a successful settlement.
#[derive(Clone, Debug, PartialEq)]
pub struct Replay {
    pub configuration: Configuration,
    pub odometer: Odometer,
    /// Half-topplings executed.
    pub steps: u64,
    /// Unexecuted revealed instructions: `(site, first, last)` index ranges.
    pub corrupted: Vec<(i64, u64, u64)>,
}

fn replay_window(s: &Settlement) -> Window {
    let hi = s.traces.iter().map(|t| t.max_site).max().unwrap_or(0).max(
        s.positions[..s.budget].last().copied().unwrap_or(0),
    );
    Window { lo: 0, hi: hi + 1 }
}

/// Moves each particle along the executed prefix of its explorer path by
/// half-topplings, then checks the post-conditions.
///
/// The prefix length `T` is
/// * for a `c` trap: the second-last visit `n'` to `c` if `u(c)` is even on
///   arriving there, else `θ`; with no right step, `0`;
/// * for an `a` trap: the last visit to `a`, whose instruction is not executed.
///
/// Instructions revealed at steps `T..τ` are corrupted. Checked: each executed
/// instruction is the one the explorer revealed; corrupted instructions lie in
/// `[b_{k-1}+1, b_k]`, are never revealed again and never consumed; the
/// cumulative parity at every `a` trap is odd; `u(0) = 0`; and `[0, b_P]` is
/// parity-stable.
pub fn replay_semi_legal<S: InstructionSource + ?Sized>(s: &Settlement, src: &S) -> Result<Replay> {
    if !s.succeeded() {
        return Err(ReplayViolation::NotSucceeded.into());
    }
    let window = replay_window(s);
    let mut eta = Configuration::from_positions(window, &s.positions[..s.budget])?;
    let mut u = Odometer::new(window);
    // reveal counters with buffered instructions, independent of `s.reveals`
    let mut sites: Vec<SiteState> =
        window.sites().map(|x| SiteState { key: src.site_key(x), ..SiteState::default() }).collect();
    let mut parity = vec![false; window.len()];
    // per site: (explorer, first, last) corrupted index range
    let mut corrupt: Vec<Option<(usize, u64, u64)>> = vec![None; window.len()];
    let mut steps = 0u64;
    let idx = |x: i64| x as usize;

    for t in &s.traces {
        let b = t.b.finite().expect("successful settlement has finite barriers");
        // visit parity, last visit to b, and last visit to b before θ
        let (mut last, mut last_before_theta) = (None, None);
        for (n, x) in t.positions().enumerate() {
            parity[idx(x)] ^= true;
            if x == b {
                last = Some(n as u64);
                if (n as u64) < t.theta {
                    last_before_theta = Some(n as u64);
                }
            }
        }
        let c_rule = t.is_c_trap();
        // T fixed up front for a traps; for c traps decided at n'
        let (mut cut, decide_at) = if c_rule {
            match t.theta {
                0 => (Some(0u64), None),
                _ => (None, Some(last_before_theta.expect("c trap is visited before θ"))),
            }
        } else {
            if !parity[idx(b)] {
                return Err(ReplayViolation::TrapParityEven { explorer: t.index, site: b }.into());
            }
            (last, None)
        };
        let mut x = t.start;
        for (n, step) in (0..).zip(t.path.iter()) {
            if decide_at == Some(n) {
                cut = Some(if u.is_odd(x) { t.theta } else { n });
            }
            if let Some((e, _, hi)) = corrupt[idx(x)] {
                if e != t.index {
                    return Err(ReplayViolation::ContainmentBreached {
                        explorer: t.index,
                        site: x,
                        index: hi,
                    }
                    .into());
                }
            }
            let st = &mut sites[idx(x)];
            if st.buffered == 0 {
                refill(src, st, x);
            }
            let d = if st.upcoming & 1 == 1 { Direction::Right } else { Direction::Left };
            st.upcoming >>= 1;
            st.buffered -= 1;
            st.revealed += 1;
            let j = st.revealed;
            if cut.is_none_or(|c| n < c) {
                if let Some((_, lo, _)) = corrupt[idx(x)] {
                    return Err(ReplayViolation::CorruptedConsumed { site: x, index: lo }.into());
                }
                if u.get(x) + 1 != j {
                    return Err(ReplayViolation::PathMismatch { explorer: t.index, step: n }.into());
                }
                if d != step {
                    return Err(ReplayViolation::PathMismatch { explorer: t.index, step: n }.into());
                }
                eta.send(&mut u, x, d)?;
                steps += 1;
            } else {
                if x <= t.barrier || x > b {
                    return Err(ReplayViolation::CorruptionOutsideZone {
                        explorer: t.index,
                        site: x,
                        lo: t.barrier + 1,
                        hi: b,
                    }
                    .into());
                }
                let entry = corrupt[idx(x)].get_or_insert((t.index, j, j));
                entry.2 = j;
            }
            x += step.step();
        }
    }

    if u.get(0) != 0 {
        return Err(ReplayViolation::OriginToppled(u.get(0)).into());
    }
    for x in 0..=s.last_barrier() {
        if eta.unstable_parity_unchecked(&u, x) {
            return Err(ReplayViolation::ParityUnstable {
                site: x,
                count: eta.count(x),
                half_topplings: u.get(x),
            }
            .into());
        }
    }
    let corrupted = corrupt
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|(_, lo, hi)| (i as i64, lo, hi)))
        .collect();
    Ok(Replay { configuration: eta, odometer: u, steps, corrupted })
}

/// Legal stabilization of the settled particles (nothing else) on a window
/// `[-R, R]` covering every site the explorers touched. Returns `(R, m(0))`.
pub fn fixation_link<S: InstructionSource + ?Sized>(s: &Settlement, src: &S) -> Result<(u64, u64)> {
    let r = replay_window(s).hi as u64 + 1;
    let w = Window::centered(r);
    let mut eta = Configuration::from_positions(w, &s.positions[..s.budget])?;
    let st = stabilize(&mut eta, w, src, Policy::Worklist)?;
    Ok((r, st.odometer.get(0)))
}
