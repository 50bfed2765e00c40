//! Seeded trials on a fixed worker pool.
//!
//! Trial `i` of stream `s` always gets seed `derive_seed(derive_seed(master, s), i)`
//! and results come back in trial order, so nothing observable depends on
//! the number of workers.

use rayon::prelude::*;
use rayon::ThreadPool;
use sandpile_core::derive_seed;

use crate::error::LabError;

/// Independent seed streams, one per kind of trial.
pub mod stream {
    pub const ABELIAN: u64 = 1;
    pub const LEAST_ACTION: u64 = 2;
    pub const MONOTONICITY: u64 = 3;
    pub const HALF_CALCULUS: u64 = 4;
    pub const HALF_LEAST_ACTION: u64 = 5;
    pub const CONSUMPTION: u64 = 6;
    pub const SETTLE: u64 = 10;
    pub const SWEEP: u64 = 20;
    pub const TAILS: u64 = 30;
    pub const REVERSAL: u64 = 31;
}

pub fn trial_seed(master: u64, stream: u64, trial: u64) -> u64 {
    derive_seed(derive_seed(master, stream), trial)
}

pub struct Campaign {
    pool: ThreadPool,
    pub master: u64,
}

impl Campaign {
    pub fn new(master: u64, workers: usize) -> Result<Self, LabError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| LabError::Config(format!("worker pool: {e}")))?;
        Ok(Campaign { pool, master })
    }

    /// Runs `f(trial, seed)` for `trial in 0..n`; results in trial order.
    pub fn run<T, F>(&self, stream: u64, n: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64, u64) -> T + Sync,
    {
        let master = self.master;
        self.pool.install(|| {
            (0..n)
                .into_par_iter()
                .map(|i| f(i, trial_seed(master, stream, i)))
                .collect()
        })
    }

    /// Like [`run`](Self::run), stopping at the first error in trial order.
    pub fn try_run<T, E, F>(&self, stream: u64, n: u64, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(u64, u64) -> Result<T, E> + Sync,
    {
        self.run(stream, n, f).into_iter().collect()
    }
}
