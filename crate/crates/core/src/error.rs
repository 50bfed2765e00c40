use alloc::string::String;

use thiserror::Error;

use crate::pile::{Legality, Mode};

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("site {site} lies outside the window [{lo}, {hi}]")]
    OutsideWindow { site: i64, lo: i64, hi: i64 },

    #[error("half-toppling at site {site} is not semi-legal: the site is empty")]
    EmptySite { site: i64 },

    #[error("toppling at site {site} is illegal: it holds {count} particle(s)")]
    IllegalTopple { site: i64, count: u32 },

    #[error("operation {index} ({mode:?} at site {site}) is not {legality:?}")]
    SequenceViolation {
        index: usize,
        site: i64,
        mode: Mode,
        legality: Legality,
    },

    #[error("stabilization exceeded its cap of {cap} operator applications")]
    IterationCap { cap: u64 },

    #[error("explorer {explorer} exceeded its cap of {cap} steps")]
    ExplorerCap { explorer: usize, cap: u64 },

    #[error("window holds {found} particle(s) but {needed} are required")]
    InsufficientParticles { found: usize, needed: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("outside the domain: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("replay invariant failed: {0}")]
    Replay(ReplayViolation),
}

/// Post-condition failures detected while replaying a settlement.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayViolation {
    #[error("the origin was half-toppled {0} time(s)")]
    OriginToppled(u64),

    #[error("site {site} is not parity-stable ({count} particle(s), {half_topplings} half-topplings)")]
    ParityUnstable {
        site: i64,
        count: u32,
        half_topplings: u64,
    },

    #[error("explorer {explorer} met corrupted instruction {index} at site {site}")]
    ContainmentBreached { explorer: usize, site: i64, index: u64 },

    #[error("explorer {explorer} corrupted site {site} outside its zone [{lo}, {hi}]")]
    CorruptionOutsideZone {
        explorer: usize,
        site: i64,
        lo: i64,
        hi: i64,
    },

    #[error("corrupted instruction {index} at site {site} was consumed")]
    CorruptedConsumed { site: i64, index: u64 },

    #[error("a-type trap of explorer {explorer} at site {site} has even visit parity")]
    TrapParityEven { explorer: usize, site: i64 },

    #[error("explorer {explorer} diverged from its recorded path at step {step}")]
    PathMismatch { explorer: usize, step: u64 },

    #[error("settlement did not succeed; nothing to replay")]
    NotSucceeded,
}

impl From<ReplayViolation> for Error {
    fn from(v: ReplayViolation) -> Self {
        Error::Replay(v)
    }
}
