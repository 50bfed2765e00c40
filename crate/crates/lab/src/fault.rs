//! A deliberately broken instruction source for sentinel tests.

use std::sync::atomic::{AtomicU64, Ordering};

use sandpile_core::{Direction, InstructionField, InstructionSource};

/// Wraps a field and mirrors every second lookup, so the same `(x, j)` can
/// read differently on different occasions. Every suite that compares two
/// ways of consuming the stacks should notice.
#[derive(Debug)]
pub struct FlakyField {
    inner: InstructionField,
    reads: AtomicU64,
}

impl FlakyField {
    pub fn new(inner: InstructionField) -> Self {
        FlakyField { inner, reads: AtomicU64::new(0) }
    }
}

impl InstructionSource for FlakyField {
    fn instruction(&self, x: i64, j: u64) -> Direction {
        let d = self.inner.instruction(x, j);
        if self.reads.fetch_add(1, Ordering::Relaxed) % 2 == 1 {
            d.mirrored()
        } else {
            d
        }
    }

    fn left_probability(&self) -> f64 {
        self.inner.left_probability()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_reads_disagree() {
        let f = FlakyField::new(InstructionField::new(3, 0.5).unwrap());
        let a = f.instruction(4, 9);
        let b = f.instruction(4, 9);
        assert_ne!(a, b);
    }
}
