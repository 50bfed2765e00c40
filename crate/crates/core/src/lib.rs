//! Stochastic sandpile on the integer line in the site-wise representation.
//!
//! Every site `x` carries an infinite stack of instructions `τ^{x,1}, τ^{x,2}, …`,
//! each sending one particle to `x - 1` (probability `q`) or `x + 1`. Given the
//! stacks, all dynamics are deterministic:
//!
//! * [`pile`] holds configurations, odometers and the toppling / half-toppling
//!   operators with their legality predicates;
//! * [`stabilize`] stabilizes finite windows under interchangeable policies and
//!   checks the least-action, abelian and monotonicity properties on instances;
//! * [`settle`] runs the explorer/trap settling procedure on the positive
//!   half-line and replays a successful settlement with semi-legal
//!   half-topplings;
//! * [`growth`] and [`tails`] carry the growth-control machinery (thresholds,
//!   events, dominating variables) and the conditional tail estimates;
//! * [`walks`] has the exact kernels of walks conditioned to stay positive and
//!   the parity-decay law.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
// `!(a < b)` is how NaN parameters get rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod ext;
pub mod growth;
pub mod init;
pub mod instructions;
pub mod pile;
pub mod settle;
pub mod stabilize;
pub mod stats;
pub mod tails;
pub mod walks;

pub use error::{Error, ReplayViolation, Result};
pub use ext::Extended;
pub use instructions::{derive_seed, Direction, InstructionField, InstructionSource};
pub use pile::{Configuration, Legality, Mode, Odometer, OdometerField, TopplingSequence, Window};
