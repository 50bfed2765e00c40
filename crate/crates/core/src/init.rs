//! Initial-condition samplers.
//!
//! Each site draws from its own seeded generator, so a realization restricted
//! to a smaller window is the restriction of the realization on a larger one.

use alloc::vec::Vec;

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instructions::derive_seed;
use crate::pile::{Configuration, Window};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", content = "density", rename_all = "snake_case")]
pub enum InitialLaw {
    /// One particle with probability `ζ ≤ 1`, else none.
    Bernoulli(f64),
    /// Poisson(`ζ`) particles per site.
    Poisson(f64),
}

impl InitialLaw {
    pub fn density(&self) -> f64 {
        match *self {
            InitialLaw::Bernoulli(z) | InitialLaw::Poisson(z) => z,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            InitialLaw::Bernoulli(z) if !(0.0..=1.0).contains(&z) => Err(Error::InvalidParameter(
                alloc::format!("Bernoulli density {z} is outside [0, 1]"),
            )),
            InitialLaw::Poisson(z) if !(z >= 0.0 && z.is_finite()) => Err(Error::InvalidParameter(
                alloc::format!("Poisson density {z} must be finite and non-negative"),
            )),
            _ => Ok(()),
        }
    }

    fn site_count(&self, seed: u64, x: i64) -> u32 {
        let mut rng = SmallRng::seed_from_u64(derive_seed(seed, x as u64));
        match *self {
            InitialLaw::Bernoulli(z) => u32::from(rng.random::<f64>() < z),
            InitialLaw::Poisson(0.0) => 0,
            InitialLaw::Poisson(z) => {
                let d = Poisson::new(z).expect("validated density");
                let v: f64 = d.sample(&mut rng);
                v as u32
            }
        }
    }

    /// Samples i.i.d. counts on `window`.
    pub fn sample(&self, window: Window, seed: u64) -> Result<Configuration> {
        self.validate()?;
        let counts = window.sites().map(|x| self.site_count(seed, x)).collect();
        Configuration::from_counts(window, counts)
    }
}

/// Occupied sites of a Bernoulli(`ζ`) configuration on `1..=window`, in
/// increasing order.
pub fn bernoulli_positions(zeta: f64, window: u64, seed: u64) -> Result<Vec<i64>> {
    let law = InitialLaw::Bernoulli(zeta);
    law.validate()?;
    Ok((1..=window as i64)
        .filter(|&x| law.site_count(seed, x) == 1)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restriction_consistent() {
        let law = InitialLaw::Poisson(0.8);
        let big = law.sample(Window::centered(50), 3).unwrap();
        let small = law.sample(Window::centered(10), 3).unwrap();
        for x in -10..=10 {
            assert_eq!(big.count(x), small.count(x));
        }
    }

    #[test]
    fn densities() {
        let w = Window::centered(50_000);
        for law in [InitialLaw::Bernoulli(0.3), InitialLaw::Poisson(1.2)] {
            let eta = law.sample(w, 9).unwrap();
            let mean = eta.mass() as f64 / w.len() as f64;
            assert!((mean - law.density()).abs() < 0.02, "{law:?}: {mean}");
        }
        assert_eq!(InitialLaw::Poisson(0.0).sample(w, 1).unwrap().mass(), 0);
    }

    #[test]
    fn rejects_bad_density() {
        assert!(InitialLaw::Bernoulli(1.5).sample(Window::centered(2), 0).is_err());
        assert!(InitialLaw::Poisson(-1.0).sample(Window::centered(2), 0).is_err());
    }

    #[test]
    fn positions_increase() {
        let p = bernoulli_positions(0.3, 1000, 4).unwrap();
        assert!(p.windows(2).all(|w| w[0] < w[1]));
        assert!(p.iter().all(|&x| (1..=1000).contains(&x)));
    }
}
