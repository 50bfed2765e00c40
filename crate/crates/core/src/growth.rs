//! Growth control for the settling procedure: the threshold index `K`, the
//! events `A` and `B_k`, the dominating variable `Y` and the capping map `Ψ`.
//!
//! On `A ∩ B_k` the particles stay ahead of the barriers (`x_j > γ₁ j` while
//! `b` grows by at most `γ₂` per particle after `K`), which leaves the next
//! explorer room. `Y` dominates the barrier increments; `E[Y] < γ₂` is what
//! the feasibility check certifies.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ext::Extended;
use crate::settle::{Settlement, SettlementStatus};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthParams {
    pub zeta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub m: u64,
    pub n: u64,
    pub epsilon: f64,
    pub rho: f64,
}

impl GrowthParams {
    /// Checks `2 < γ₂ < γ₁ < 1/ζ`, `M, N ≥ 2`, `0 ≤ ε < ½` and `0 < ρ < 1`.
    pub fn validate(&self) -> Result<()> {
        let GrowthParams { zeta, gamma1, gamma2, m, n, epsilon, rho } = *self;
        if !(zeta > 0.0 && 2.0 < gamma2 && gamma2 < gamma1 && gamma1 * zeta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "need 2 < γ₂ < γ₁ < 1/ζ, got γ₂ = {gamma2}, γ₁ = {gamma1}, ζ = {zeta}"
            )));
        }
        if m < 2 || n < 2 {
            return Err(Error::InvalidParameter(format!("need M, N ≥ 2, got M = {m}, N = {n}")));
        }
        if !(0.0..0.5).contains(&epsilon) {
            return Err(Error::InvalidParameter(format!("ε = {epsilon} is outside [0, ½)")));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidParameter(format!("ρ = {rho} is outside (0, 1)")));
        }
        Ok(())
    }

    /// `P[Y > s]`: `(½+ε)^s` up to `N`, then `min{(½+ε)^N, ρ^s}`. Equals 1 at 0.
    pub fn y_tail(&self, s: u64) -> f64 {
        let base = 0.5 + self.epsilon;
        if s <= self.n {
            powu(base, s)
        } else {
            powu(base, self.n).min(powu(self.rho, s))
        }
    }

    /// `E[Y] = Σ_{s ≥ 0} P[Y > s]`, summed exactly: the tail is flat at
    /// `(½+ε)^N` until `ρ^s` drops below it, then geometric.
    pub fn y_mean(&self) -> f64 {
        let flat = powu(0.5 + self.epsilon, self.n);
        let mut sum: f64 = (0..=self.n).map(|s| self.y_tail(s)).sum();
        let mut s = self.n + 1;
        while powu(self.rho, s) >= flat {
            sum += flat;
            s += 1;
        }
        sum + powu(self.rho, s) / (1.0 - self.rho)
    }
}

fn powu(b: f64, e: u64) -> f64 {
    libm::pow(b, e as f64)
}

/// `K = ⌈(γ₁M + N)/(γ₁ − γ₂)⌉`.
pub fn k_threshold(params: &GrowthParams) -> Result<u64> {
    let GrowthParams { gamma1, gamma2, m, n, .. } = *params;
    if !(gamma1 > gamma2) {
        return Err(Error::Domain(format!("K needs γ₁ > γ₂, got γ₁ = {gamma1}, γ₂ = {gamma2}")));
    }
    Ok(libm::ceil((gamma1 * m as f64 + n as f64) / (gamma1 - gamma2)) as u64)
}

/// `A` restricted to the given positions: `x_j > γ₁ j` for every listed `j`
/// (`positions[0]` is `x_1`).
pub fn event_a(positions: &[i64], gamma1: f64) -> bool {
    positions.iter().zip(1..).all(|(&x, j)| x as f64 > gamma1 * j as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Events {
    pub a: bool,
    pub b: bool,
}

/// `A = [x_j > γ₁ j, j ≤ k]` and `B_k = [b_K < γ₂K, b_{K+j} ≤ b_K + γ₂ j for
/// j ≤ k − K]`. A failed step makes every later barrier infinite, so `B_k` is
/// false once the failure is at or before `k`.
pub fn event_indicators(state: &Settlement, params: &GrowthParams, k: usize) -> Result<Events> {
    let kk = k_threshold(params)? as usize;
    if k < kk {
        return Err(Error::Domain(format!("B_k needs k ≥ K = {kk}, got k = {k}")));
    }
    if k > state.budget {
        return Err(Error::Precondition(format!("k = {k} exceeds the budget {}", state.budget)));
    }
    if state.barriers.len() <= k && state.status == SettlementStatus::Running {
        return Err(Error::Precondition(format!("settlement has not reached particle {k}")));
    }
    let a = event_a(&state.positions[..k], params.gamma1);
    let barrier = |j: usize| state.barriers.get(j).copied().unwrap_or(Extended::Infinite);
    let b = match barrier(kk) {
        Extended::Finite(bk) if (bk as f64) < params.gamma2 * kk as f64 => (1..=k - kk).all(|j| {
            barrier(kk + j).finite().is_some_and(|b| b as f64 <= bk as f64 + params.gamma2 * j as f64)
        }),
        _ => false,
    };
    Ok(Events { a, b })
}

/// One draw of `Y` by inversion: `Y > s` iff `U < P[Y > s]`, `U` uniform on
/// `(0, 1]`. Always at least 1.
pub fn sample_dominating_y<R: Rng + ?Sized>(params: &GrowthParams, rng: &mut R) -> u64 {
    let u = 1.0 - rng.random::<f64>();
    let mut s = 1;
    while u < params.y_tail(s) {
        s += 1;
    }
    s
}

/// `(Ψy)_m = y_m` while every earlier partial sum `Σ_{ℓ≤r} y_ℓ` stays at or
/// below `γ₂ r`, else `+∞`. Non-decreasing in `y`.
pub fn psi_transform(y: &[u64], gamma2: f64) -> Vec<Extended<u64>> {
    let mut sum = 0u64;
    let mut ok = true;
    let mut out = Vec::with_capacity(y.len());
    for (r, &v) in (1..).zip(y) {
        out.push(if ok { Extended::Finite(v) } else { Extended::Infinite });
        sum += v;
        ok = ok && sum as f64 <= gamma2 * r as f64;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub feasible: bool,
    /// `Σ_{s=0}^N (½+ε)^s + ρ^{N+1}/(1−ρ)`.
    pub lhs: f64,
    pub mean_y: f64,
}

/// Compares `Σ_{s≤N}(½+ε)^s + Σ_{s>N} ρ^s` with `γ₂`. `E[Y]` never exceeds
/// the left side, so feasibility gives `E[Y] < γ₂`.
pub fn check_feasibility(params: &GrowthParams) -> Result<Feasibility> {
    if !(params.rho < 1.0) {
        return Err(Error::Domain(format!("ρ = {} must be below 1", params.rho)));
    }
    if !(params.epsilon < 0.5) {
        return Err(Error::Domain(format!("ε = {} must be below ½", params.epsilon)));
    }
    let base = 0.5 + params.epsilon;
    let lhs = (0..=params.n).map(|s| powu(base, s)).sum::<f64>()
        + powu(params.rho, params.n + 1) / (1.0 - params.rho);
    let mean_y = params.y_mean();
    let feasible = lhs < params.gamma2;
    debug_assert!(!feasible || mean_y < params.gamma2);
    Ok(Feasibility { feasible, lhs, mean_y })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instructions::InstructionField;
    use crate::settle::{settle, SettleOptions};
    use rand::rngs::SmallRng;
    use rand::SeedableRng;

    fn params(gamma1: f64, gamma2: f64, m: u64, n: u64) -> GrowthParams {
        GrowthParams { zeta: 0.2, gamma1, gamma2, m, n, epsilon: 0.05, rho: 0.6 }
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(k_threshold(&params(3.0, 2.5, 2, 4)).unwrap(), 20);
        assert_eq!(k_threshold(&params(4.0, 2.1, 2, 2)).unwrap(), 6);
        assert!(matches!(k_threshold(&params(2.5, 2.5, 2, 2)), Err(Error::Domain(_))));
    }

    #[test]
    fn validation() {
        assert!(params(4.5, 3.5, 2, 4).validate().is_ok());
        assert!(params(5.5, 3.5, 2, 4).validate().is_err(), "γ₁ ≥ 1/ζ");
        assert!(params(4.5, 2.0, 2, 4).validate().is_err());
        assert!(params(4.5, 3.5, 1, 4).validate().is_err());
    }

    #[test]
    fn y_tail_example() {
        let p = GrowthParams { epsilon: 0.05, n: 6, ..params(4.5, 3.5, 2, 6) };
        assert!((p.y_tail(3) - 0.166375).abs() < 1e-15);
        assert_eq!(p.y_tail(0), 1.0);
    }

    #[test]
    fn y_mean_matches_direct_sum() {
        for (eps, n, rho) in [(0.05, 6, 0.6), (0.1, 4, 0.75), (0.0, 2, 0.9), (0.3, 3, 0.2)] {
            let p = GrowthParams { epsilon: eps, n, rho, ..params(4.5, 3.5, 2, 2) };
            let direct: f64 = (0..5000).map(|s| p.y_tail(s)).sum();
            assert!((p.y_mean() - direct).abs() < 1e-12, "{eps} {n} {rho}");
        }
    }

    #[test]
    fn y_sampler_mean() {
        let p = GrowthParams { epsilon: 0.05, n: 6, ..params(4.5, 3.5, 2, 6) };
        let mut rng = SmallRng::seed_from_u64(3);
        let n = 200_000;
        let mean = (0..n).map(|_| sample_dominating_y(&p, &mut rng) as f64).sum::<f64>() / n as f64;
        assert!((mean / p.y_mean() - 1.0).abs() < 0.01);
    }

    #[test]
    fn psi_examples() {
        use Extended::{Finite as F, Infinite as I};
        assert_eq!(psi_transform(&[1, 1, 1], 2.5), [F(1), F(1), F(1)]);
        assert_eq!(psi_transform(&[5, 1, 1], 2.5), [F(5), I, I]);
        assert_eq!(psi_transform(&[2, 3, 9, 1], 2.5), [F(2), F(3), F(9), I]);
        assert!(psi_transform(&[], 2.5).is_empty());
    }

    #[test]
    fn feasibility() {
        let p = GrowthParams { epsilon: 0.01, n: 20, rho: 0.9, ..params(4.5, 2.5, 2, 20) };
        let f = check_feasibility(&p).unwrap();
        let expect = (0..=20).map(|s| 0.51f64.powi(s)).sum::<f64>() + 0.9f64.powi(21) / 0.1;
        assert!((f.lhs - expect).abs() < 1e-12);
        assert!(!f.feasible);
        let p = GrowthParams { epsilon: 0.1, n: 4, rho: 0.75, ..params(4.5, 3.5, 2, 4) };
        let f = check_feasibility(&p).unwrap();
        assert!(f.feasible && f.mean_y <= f.lhs);
        let p = GrowthParams { rho: 1.0, ..p };
        assert!(matches!(check_feasibility(&p), Err(Error::Domain(_))));
    }

    #[test]
    fn events_on_settlements() {
        let p = GrowthParams { zeta: 0.2, gamma1: 4.5, gamma2: 3.5, m: 2, n: 2, epsilon: 0.1, rho: 0.75 };
        let kk = k_threshold(&p).unwrap() as usize;
        assert_eq!(kk, 11);
        let opts = SettleOptions { step_cap: 1_000_000, ..SettleOptions::default() };
        let (mut seen_fail, mut seen_ok) = (false, false);
        for seed in 0..200 {
            let f = InstructionField::new(seed, 0.5).unwrap();
            let Ok(s) = settle(0.2, &f, seed, 20, 2000, opts) else { continue };
            assert!(matches!(event_indicators(&s, &p, kk - 1), Err(Error::Domain(_))));
            let e = event_indicators(&s, &p, 20).unwrap();
            if !s.succeeded() {
                seen_fail = true;
                assert!(!e.b);
            } else if e.b {
                seen_ok = true;
            }
            assert_eq!(e.a, event_a(&s.positions[..20], 4.5));
        }
        assert!(seen_fail && seen_ok);
    }
}
