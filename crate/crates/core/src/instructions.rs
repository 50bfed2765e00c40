//! Seed-addressed instruction stacks.
//!
//! Instruction `j` at site `x` is a pure function of `(seed, x, j)`: a 64-bit
//! word is produced by a counter-mode mixer keyed on the site and compared
//! against `q`. Nothing is stored; the stacks are conceptually infinite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pile::Odometer;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const SITE_SALT: u64 = 0xd1b5_4a32_d192_ed03;

/// SplitMix64 finalizer. A bijection on `u64` with full avalanche.
#[inline]
pub const fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed number `index` of `master`. Used to give every trial, site or
/// sub-stream its own independent seed.
#[inline]
pub const fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(mix64(master ^ SITE_SALT).wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Converts a 64-bit word to a uniform double in `[0, 1)`.
#[inline]
pub fn unit_f64(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Left,
    Right,
}

impl Direction {
    #[inline]
    pub fn step(self) -> i64 {
        match self {
            Direction::Left => -1,
            Direction::Right => 1,
        }
    }

    #[inline]
    pub fn mirrored(self) -> Direction {
        match self {
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }
}

/// Read access to an instruction array.
///
/// Implementations must be pure: repeated queries of `(x, j)` return the same
/// direction. Test fixtures break this on purpose.
pub trait InstructionSource {
    /// Instruction `j` (1-based) at site `x`.
    fn instruction(&self, x: i64, j: u64) -> Direction;

    /// Probability that an instruction points left.
    fn left_probability(&self) -> f64;

    /// Per-site key for [`instruction_keyed`](Self::instruction_keyed). Hot
    /// loops cache it; the default carries no information.
    #[inline]
    fn site_key(&self, x: i64) -> u64 {
        x as u64
    }

    /// Same as `instruction(x, j)` given `key = site_key(x)`.
    #[inline]
    fn instruction_keyed(&self, key: u64, x: i64, j: u64) -> Direction {
        let _ = key;
        self.instruction(x, j)
    }

    /// Instructions `j0 .. j0 + 64` at `x` as bits, least significant first,
    /// set for right.
    #[inline]
    fn instruction_bits(&self, key: u64, x: i64, j0: u64) -> u64 {
        let mut word = 0u64;
        for b in 0..64 {
            word |= u64::from(self.instruction_keyed(key, x, j0 + b) == Direction::Right) << b;
        }
        word
    }
}

/// The random instruction array for one trial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructionField {
    seed: u64,
    /// Left probability of the underlying (unreflected) stacks.
    base_q: f64,
    reflected: bool,
}

impl InstructionField {
    pub fn new(seed: u64, q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::InvalidParameter(alloc::format!(
                "left probability q = {q} is outside [0, 1]"
            )));
        }
        Ok(InstructionField {
            seed,
            base_q: q,
            reflected: false,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The same stacks seen through the lattice reflection `x ↦ -x`: instruction
    /// `(x, j)` of the result is the mirror image of instruction `(-x, j)` here.
    pub fn reflected(&self) -> Self {
        InstructionField {
            reflected: !self.reflected,
            ..*self
        }
    }

    /// Reflects the field if needed so that `q ≥ 1/2`.
    pub fn oriented(&self) -> Self {
        if self.left_probability() < 0.5 {
            self.reflected()
        } else {
            *self
        }
    }

    pub fn is_reflected(&self) -> bool {
        self.reflected
    }

    #[inline]
    fn key_of(&self, x: i64) -> u64 {
        mix64(mix64(self.seed ^ SITE_SALT) ^ (x as u64))
    }

    #[inline]
    fn raw(&self, x: i64, j: u64) -> Direction {
        self.raw_keyed(self.key_of(x), j)
    }

    #[inline]
    fn raw_keyed(&self, key: u64, j: u64) -> Direction {
        let word = mix64(key.wrapping_add(j.wrapping_mul(GOLDEN)));
        if unit_f64(word) < self.base_q {
            Direction::Left
        } else {
            Direction::Right
        }
    }

    /// `unit_f64(w) < q` iff `w >> 11 < ceil(q·2^53)`; both sides are exact.
    #[inline]
    fn threshold(&self) -> u64 {
        libm::ceil(self.base_q * (1u64 << 53) as f64) as u64
    }

    /// The next instruction that a (half-)toppling at `x` would consume, given
    /// the odometer `u` of half-topplings already performed. Does not mutate.
    pub fn next_unconsumed(&self, u: &Odometer, x: i64) -> (u64, Direction) {
        let j = u.get(x) + 1;
        (j, self.instruction(x, j))
    }
}

impl InstructionSource for InstructionField {
    #[inline]
    fn instruction(&self, x: i64, j: u64) -> Direction {
        debug_assert!(j >= 1, "instruction indices are 1-based");
        if self.reflected {
            self.raw(x.wrapping_neg(), j).mirrored()
        } else {
            self.raw(x, j)
        }
    }

    fn left_probability(&self) -> f64 {
        if self.reflected {
            1.0 - self.base_q
        } else {
            self.base_q
        }
    }

    #[inline]
    fn site_key(&self, x: i64) -> u64 {
        self.key_of(if self.reflected { x.wrapping_neg() } else { x })
    }

    #[inline]
    fn instruction_keyed(&self, key: u64, _x: i64, j: u64) -> Direction {
        let d = self.raw_keyed(key, j);
        if self.reflected {
            d.mirrored()
        } else {
            d
        }
    }

    #[inline]
    fn instruction_bits(&self, key: u64, _x: i64, j0: u64) -> u64 {
        let thr = self.threshold();
        let mut word = 0u64;
        for b in 0..64 {
            let m = mix64(key.wrapping_add((j0 + b).wrapping_mul(GOLDEN))) >> 11;
            word |= u64::from(m >= thr) << b;
        }
        if self.reflected {
            !word
        } else {
            word
        }
    }
}

impl<T: InstructionSource + ?Sized> InstructionSource for &T {
    #[inline]
    fn instruction(&self, x: i64, j: u64) -> Direction {
        (**self).instruction(x, j)
    }

    fn left_probability(&self) -> f64 {
        (**self).left_probability()
    }

    #[inline]
    fn site_key(&self, x: i64) -> u64 {
        (**self).site_key(x)
    }

    #[inline]
    fn instruction_keyed(&self, key: u64, x: i64, j: u64) -> Direction {
        (**self).instruction_keyed(key, x, j)
    }

    #[inline]
    fn instruction_bits(&self, key: u64, x: i64, j0: u64) -> u64 {
        (**self).instruction_bits(key, x, j0)
    }
}
