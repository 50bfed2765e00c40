//! Configurations, odometers and the toppling operators.
//!
//! A [`Configuration`] stores particle counts on a finite window `[lo, hi]`.
//! Particles sent past either end are tallied as absorbed; sites outside the
//! window are never toppled. The [`Odometer`] counts half-topplings per site,
//! so a full toppling adds 2 and `u(x)` is also the number of instructions
//! consumed at `x`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instructions::{Direction, InstructionSource};

/// Inclusive integer interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub lo: i64,
    pub hi: i64,
}

impl Window {
    pub fn new(lo: i64, hi: i64) -> Result<Self> {
        if lo > hi {
            return Err(Error::InvalidParameter(alloc::format!(
                "empty window [{lo}, {hi}]"
            )));
        }
        Ok(Window { lo, hi })
    }

    /// `[-radius, radius]`.
    pub fn centered(radius: u64) -> Self {
        let r = radius as i64;
        Window { lo: -r, hi: r }
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn contains(&self, x: i64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn is_subset_of(&self, other: &Window) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    #[inline]
    pub fn index(&self, x: i64) -> Option<usize> {
        self.contains(x).then(|| (x - self.lo) as usize)
    }

    pub fn sites(&self) -> impl Iterator<Item = i64> + Clone {
        self.lo..=self.hi
    }

    fn check(&self, x: i64) -> Result<usize> {
        self.index(x).ok_or(Error::OutsideWindow {
            site: x,
            lo: self.lo,
            hi: self.hi,
        })
    }
}

/// Half-toppling counts `u(x)`; the toppling odometer is `h(x) = u(x) / 2`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Odometer {
    window: Window,
    u: Vec<u64>,
}

impl Odometer {
    pub fn new(window: Window) -> Self {
        Odometer {
            window,
            u: vec![0; window.len()],
        }
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// Half-topplings performed at `x` (0 outside the window).
    #[inline]
    pub fn get(&self, x: i64) -> u64 {
        self.window.index(x).map_or(0, |i| self.u[i])
    }

    pub fn is_odd(&self, x: i64) -> bool {
        self.get(x) % 2 == 1
    }

    /// Completed full topplings at `x`, `⌊u(x) / 2⌋`.
    pub fn topplings(&self, x: i64) -> u64 {
        self.get(x) / 2
    }

    pub fn half_units(&self) -> &[u64] {
        &self.u
    }

    /// `m(x) = u(x) / 2` as a field (rounding down on odd entries).
    pub fn toppling_field(&self) -> OdometerField {
        OdometerField {
            window: self.window,
            values: self.u.iter().map(|&v| v / 2).collect(),
        }
    }

    /// The half-toppling counts themselves as a field (`m̃`).
    pub fn half_toppling_field(&self) -> OdometerField {
        OdometerField {
            window: self.window,
            values: self.u.clone(),
        }
    }
}

/// A non-negative integer field on a window, read as 0 elsewhere. Used for
/// `m_α` (topplings per site) and `m̃_β` (half-topplings per site).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OdometerField {
    window: Window,
    values: Vec<u64>,
}

impl OdometerField {
    pub fn zeros(window: Window) -> Self {
        OdometerField {
            window,
            values: vec![0; window.len()],
        }
    }

    pub fn window(&self) -> Window {
        self.window
    }

    #[inline]
    pub fn get(&self, x: i64) -> u64 {
        self.window.index(x).map_or(0, |i| self.values[i])
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn total(&self) -> u64 {
        self.values.iter().sum()
    }

    fn bump(&mut self, x: i64) {
        if let Some(i) = self.window.index(x) {
            self.values[i] += 1;
        }
    }

    /// First site where `self(x) > other(x)`, if any.
    pub fn first_excess_over(&self, other: &OdometerField) -> Option<(i64, u64, u64)> {
        self.window
            .sites()
            .map(|x| (x, self.get(x), other.get(x)))
            .find(|&(_, a, b)| a > b)
    }

    /// Pointwise `self ≤ other`.
    pub fn le(&self, other: &OdometerField) -> bool {
        self.first_excess_over(other).is_none()
    }

    /// Equality as functions on ℤ (windows may differ where both vanish).
    pub fn same_as(&self, other: &OdometerField) -> bool {
        self.le(other) && other.le(self)
    }

    /// Every entry multiplied by `k`.
    pub fn scaled(&self, k: u64) -> OdometerField {
        OdometerField {
            window: self.window,
            values: self.values.iter().map(|v| v * k).collect(),
        }
    }
}

/// Particle counts on a window plus tallies of particles that left it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Configuration {
    window: Window,
    counts: Vec<u32>,
    absorbed_left: u64,
    absorbed_right: u64,
}

/// JSON-friendly dump of a `(Configuration, Odometer)` pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub window: [i64; 2],
    pub counts: Vec<u32>,
    pub u: Vec<u64>,
    pub absorbed_left: u64,
    pub absorbed_right: u64,
}

impl Configuration {
    pub fn empty(window: Window) -> Self {
        Configuration {
            window,
            counts: vec![0; window.len()],
            absorbed_left: 0,
            absorbed_right: 0,
        }
    }

    pub fn from_counts(window: Window, counts: Vec<u32>) -> Result<Self> {
        if counts.len() != window.len() {
            return Err(Error::InvalidParameter(alloc::format!(
                "{} counts supplied for a window of {} sites",
                counts.len(),
                window.len()
            )));
        }
        Ok(Configuration {
            window,
            counts,
            absorbed_left: 0,
            absorbed_right: 0,
        })
    }

    /// One particle at each listed site (repeats stack).
    pub fn from_positions(window: Window, positions: &[i64]) -> Result<Self> {
        let mut eta = Configuration::empty(window);
        for &x in positions {
            eta.add_particle(x)?;
        }
        Ok(eta)
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn absorbed_left(&self) -> u64 {
        self.absorbed_left
    }

    pub fn absorbed_right(&self) -> u64 {
        self.absorbed_right
    }

    pub fn get(&self, x: i64) -> Result<u32> {
        Ok(self.counts[self.window.check(x)?])
    }

    /// `η(x)`, 0 outside the window.
    #[inline]
    pub fn count(&self, x: i64) -> u32 {
        self.window.index(x).map_or(0, |i| self.counts[i])
    }

    pub fn set(&mut self, x: i64, n: u32) -> Result<()> {
        let i = self.window.check(x)?;
        self.counts[i] = n;
        Ok(())
    }

    pub fn add_particle(&mut self, x: i64) -> Result<()> {
        let i = self.window.check(x)?;
        self.counts[i] += 1;
        Ok(())
    }

    /// Particles inside the window.
    pub fn mass(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Particles inside plus absorbed; conserved by every operator.
    pub fn total_mass(&self) -> u64 {
        self.mass() + self.absorbed_left + self.absorbed_right
    }

    /// Pointwise `self ≤ other` as configurations on ℤ.
    pub fn le(&self, other: &Configuration) -> bool {
        self.window.sites().all(|x| self.count(x) <= other.count(x))
    }

    pub fn is_unstable_full(&self, x: i64) -> Result<bool> {
        Ok(self.get(x)? >= 2)
    }

    /// Instability in the half-toppling sense: at least two particles, or one
    /// particle at a site half-toppled an odd number of times.
    pub fn is_unstable_parity(&self, u: &Odometer, x: i64) -> Result<bool> {
        let n = self.get(x)?;
        Ok(n >= 2 || (n == 1 && u.is_odd(x)))
    }

    #[inline]
    pub(crate) fn unstable_full_unchecked(&self, x: i64) -> bool {
        self.count(x) >= 2
    }

    #[inline]
    pub(crate) fn unstable_parity_unchecked(&self, u: &Odometer, x: i64) -> bool {
        let n = self.count(x);
        n >= 2 || (n == 1 && u.is_odd(x))
    }

    /// Sends one particle from `x` according to instruction `u(x) + 1` and
    /// increments `u(x)`. Needs `η(x) ≥ 1`.
    pub fn half_topple<S: InstructionSource + ?Sized>(
        &mut self,
        u: &mut Odometer,
        src: &S,
        x: i64,
    ) -> Result<Direction> {
        let dir = src.instruction(x, u.get(x) + 1);
        self.send(u, x, dir)?;
        Ok(dir)
    }

    /// Half-topples `x` with an instruction the caller already looked up.
    #[inline]
    pub(crate) fn send(&mut self, u: &mut Odometer, x: i64, dir: Direction) -> Result<()> {
        let i = self.window.check(x)?;
        if self.counts[i] == 0 {
            return Err(Error::EmptySite { site: x });
        }
        debug_assert_eq!(u.window, self.window, "odometer and configuration windows differ");
        self.counts[i] -= 1;
        u.u[i] += 1;
        self.deposit(x + dir.step());
        Ok(())
    }

    /// Legally stabilizes `region` by full topplings, emptying each popped
    /// site down to at most one particle in one go. Instructions are read 64
    /// at a time and only counted, never stored. Returns the toppling count.
    ///
    /// Invariant of the stack: it holds exactly the region sites with at least
    /// two particles, each once.
    pub(crate) fn drain_worklist<S: InstructionSource + ?Sized>(
        &mut self,
        u: &mut Odometer,
        region: Window,
        src: &S,
        cap: u64,
    ) -> Result<u64> {
        debug_assert!(region.is_subset_of(&self.window) && u.window == self.window);
        let lo = self.window.lo;
        let (r0, r1) = ((region.lo - lo) as usize, (region.hi - lo) as usize);
        let last = self.counts.len() - 1;
        let mut stacks: Vec<BitStack> = (r0..=r1)
            .map(|i| BitStack { key: src.site_key(lo + i as i64), bits: 0, buffered: 0 })
            .collect();
        let counts = &mut self.counts;
        let mut work: Vec<usize> = (r0..=r1).rev().filter(|&i| counts[i] >= 2).collect();
        let mut steps = 0u64;
        while let Some(i) = work.pop() {
            let k = counts[i] / 2;
            steps += u64::from(k);
            if steps > cap {
                return Err(Error::IterationCap { cap });
            }
            let x = lo + i as i64;
            let rights = stacks[i - r0].take(src, x, u.u[i] + 1, 2 * k);
            counts[i] -= 2 * k;
            u.u[i] += u64::from(2 * k);
            let lefts = 2 * k - rights;
            if i < last {
                let before = counts[i + 1];
                counts[i + 1] += rights;
                if before < 2 && counts[i + 1] >= 2 && i < r1 {
                    work.push(i + 1);
                }
            } else {
                self.absorbed_right += u64::from(rights);
            }
            if i > 0 {
                let before = counts[i - 1];
                counts[i - 1] += lefts;
                if before < 2 && counts[i - 1] >= 2 && i > r0 {
                    work.push(i - 1);
                }
            } else {
                self.absorbed_left += u64::from(lefts);
            }
        }
        Ok(steps)
    }

    /// Full toppling: two consecutive half-topplings at `x`. Needs `η(x) ≥ 2`.
    pub fn topple<S: InstructionSource + ?Sized>(
        &mut self,
        u: &mut Odometer,
        src: &S,
        x: i64,
    ) -> Result<[Direction; 2]> {
        let n = self.get(x)?;
        if n < 2 {
            return Err(Error::IllegalTopple { site: x, count: n });
        }
        let first = self.half_topple(u, src, x)?;
        let second = self.half_topple(u, src, x)?;
        Ok([first, second])
    }

    #[inline]
    fn deposit(&mut self, y: i64) {
        match self.window.index(y) {
            Some(k) => self.counts[k] += 1,
            None if y < self.window.lo => self.absorbed_left += 1,
            None => self.absorbed_right += 1,
        }
    }

    /// Applies `seq` left to right, checking legality before each operator.
    ///
    /// Returns the visit field `m_seq` (counts of each site in the sequence).
    /// On a violation the state holds the result of the operators before it.
    pub fn apply_sequence<S: InstructionSource + ?Sized>(
        &mut self,
        u: &mut Odometer,
        src: &S,
        seq: &TopplingSequence,
        legality: Legality,
    ) -> Result<OdometerField> {
        let mut visits = OdometerField::zeros(self.window);
        for (index, &x) in seq.sites.iter().enumerate() {
            let violation = Error::SequenceViolation {
                index,
                site: x,
                mode: seq.mode,
                legality,
            };
            let n = self.get(x).map_err(|_| violation.clone())?;
            let allowed = match (seq.mode, legality) {
                (Mode::Full, _) => n >= 2,
                (Mode::Half, Legality::Legal) => n >= 2 || (n == 1 && u.is_odd(x)),
                (Mode::Half, Legality::SemiLegal) => n >= 1,
            };
            if !allowed {
                return Err(violation);
            }
            match seq.mode {
                Mode::Full => {
                    self.topple(u, src, x)?;
                }
                Mode::Half => {
                    self.half_topple(u, src, x)?;
                }
            }
            visits.bump(x);
        }
        Ok(visits)
    }

    pub fn snapshot(&self, u: &Odometer) -> Snapshot {
        Snapshot {
            window: [self.window.lo, self.window.hi],
            counts: self.counts.clone(),
            u: u.u.clone(),
            absorbed_left: self.absorbed_left,
            absorbed_right: self.absorbed_right,
        }
    }
}

/// Instructions `j, …, j + buffered - 1` of one site as bits (set = right),
/// where `j - 1` is the site's current half-toppling count.
struct BitStack {
    key: u64,
    bits: u64,
    buffered: u32,
}

impl BitStack {
    /// Consumes `n` instructions starting with number `j` and counts the
    /// right steps among them.
    #[inline]
    fn take<S: InstructionSource + ?Sized>(&mut self, src: &S, x: i64, mut j: u64, mut n: u32) -> u32 {
        let mut rights = 0;
        while n > 0 {
            if self.buffered == 0 {
                self.bits = src.instruction_bits(self.key, x, j);
                self.buffered = 64;
            }
            let t = n.min(self.buffered);
            let mask = if t == 64 { u64::MAX } else { (1u64 << t) - 1 };
            rights += (self.bits & mask).count_ones();
            self.bits = self.bits.checked_shr(t).unwrap_or(0);
            self.buffered -= t;
            n -= t;
            j += u64::from(t);
        }
        rights
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Full topplings `Φ_x`.
    Full,
    /// Half-topplings `φ_x`.
    Half,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Legality {
    Legal,
    SemiLegal,
}

/// An ordered list of sites to (half-)topple.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopplingSequence {
    pub sites: Vec<i64>,
    pub mode: Mode,
}

impl TopplingSequence {
    pub fn new(mode: Mode, sites: Vec<i64>) -> Self {
        TopplingSequence { sites, mode }
    }

    /// `β²`: each site repeated twice, as half-topplings.
    pub fn doubled(&self) -> TopplingSequence {
        TopplingSequence {
            sites: self.sites.iter().flat_map(|&x| [x, x]).collect(),
            mode: Mode::Half,
        }
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
}
