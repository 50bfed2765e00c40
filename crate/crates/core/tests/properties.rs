use std::cell::RefCell;
use std::collections::BTreeMap;

use proptest::prelude::*;
use sandpile_core::growth::psi_transform;
use sandpile_core::init::InitialLaw;
use sandpile_core::settle::{replay_semi_legal, settle, SettleOptions};
use sandpile_core::stabilize::*;
use sandpile_core::stats::wilson;
use sandpile_core::walks::{parity_exact, HWalkKernel, ParityProcess};
use sandpile_core::*;

fn config(counts: Vec<u32>) -> Configuration {
    let r = (counts.len() / 2) as i64;
    let w = Window::new(-r, counts.len() as i64 - 1 - r).unwrap();
    Configuration::from_counts(w, counts).unwrap()
}

fn counts_strategy(max_len: usize, max_count: u32) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0..=max_count, 1..=max_len)
}

/// Remembers every `(site, index)` looked up.
struct Recording<'a> {
    inner: &'a InstructionField,
    seen: RefCell<BTreeMap<i64, Vec<u64>>>,
}

impl InstructionSource for Recording<'_> {
    fn instruction(&self, x: i64, j: u64) -> Direction {
        self.seen.borrow_mut().entry(x).or_default().push(j);
        self.inner.instruction(x, j)
    }
    fn left_probability(&self) -> f64 {
        self.inner.left_probability()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn mass_is_conserved_by_semi_legal_moves(
        counts in counts_strategy(12, 4),
        seed in any::<u64>(),
        picks in prop::collection::vec(any::<prop::sample::Index>(), 0..60),
    ) {
        let field = InstructionField::new(seed, 0.5).unwrap();
        let mut eta = config(counts);
        let mut u = Odometer::new(eta.window());
        let mass = eta.total_mass();
        for p in picks {
            let occupied: Vec<i64> = eta.window().sites().filter(|&x| eta.count(x) > 0).collect();
            if occupied.is_empty() {
                break;
            }
            eta.half_topple(&mut u, &field, occupied[p.index(occupied.len())]).unwrap();
            prop_assert_eq!(eta.total_mass(), mass);
        }
    }

    #[test]
    fn topple_is_two_half_topples(counts in counts_strategy(9, 5), seed in any::<u64>(), pre in 0u64..5) {
        let field = InstructionField::new(seed, 0.7).unwrap();
        let eta = config(counts);
        let w = eta.window();
        for x in w.sites().filter(|&x| eta.count(x) >= 2) {
            // start from a non-trivial odometer so later stack entries are used
            let (mut e1, mut u1) = (eta.clone(), Odometer::new(w));
            for _ in 0..pre {
                if e1.count(x) >= 1 {
                    e1.half_topple(&mut u1, &field, x).unwrap();
                }
            }
            if e1.count(x) < 2 {
                continue;
            }
            let (mut e2, mut u2) = (e1.clone(), u1.clone());
            e1.topple(&mut u1, &field, x).unwrap();
            e2.half_topple(&mut u2, &field, x).unwrap();
            e2.half_topple(&mut u2, &field, x).unwrap();
            prop_assert_eq!(&e1, &e2);
            prop_assert_eq!(&u1, &u2);
        }
    }

    #[test]
    fn doubling_doubles_the_visit_field(counts in counts_strategy(15, 3), seed in any::<u64>(), len in 0usize..80) {
        let field = InstructionField::new(seed, 0.5).unwrap();
        let eta = config(counts);
        let beta = random_legal_sequence(&eta, eta.window(), &field, seed ^ 1, len).unwrap();
        prop_assert_eq!(check_half_calculus(&eta, &beta, &field, 0).unwrap(), None);
    }

    #[test]
    fn odometer_counts_consumed_instructions(counts in counts_strategy(10, 4), seed in any::<u64>()) {
        let inner = InstructionField::new(seed, 0.5).unwrap();
        let src = Recording { inner: &inner, seen: RefCell::default() };
        let mut eta = config(counts);
        let w = eta.window();
        let mut u = Odometer::new(w);
        stabilize_parity(&mut eta, &mut u, w, &src, Policy::LeftToRightSweep).unwrap();
        let seen = src.seen.into_inner();
        for x in w.sites() {
            let want: Vec<u64> = (1..=u.get(x)).collect();
            prop_assert_eq!(seen.get(&x).cloned().unwrap_or_default(), want);
        }
    }

    #[test]
    fn stabilization_is_policy_free(counts in counts_strategy(21, 3), seed in any::<u64>(), q in 0.3f64..0.9) {
        let field = InstructionField::new(seed, q).unwrap();
        let eta = config(counts);
        let policies = [Policy::RandomOrder(seed), Policy::LeftToRightSweep, Policy::GreedyMax, Policy::Worklist];
        prop_assert_eq!(check_abelian(&eta, eta.window(), &field, &policies, 0).unwrap(), None);
    }

    #[test]
    fn stabilized_windows_are_stable(counts in counts_strategy(21, 4), seed in any::<u64>()) {
        let field = InstructionField::new(seed, 0.5).unwrap();
        let mut eta = config(counts);
        let w = eta.window();
        stabilize(&mut eta, w, &field, Policy::Worklist).unwrap();
        prop_assert!(w.sites().all(|x| eta.count(x) <= 1));
    }

    #[test]
    fn legal_prefixes_never_exceed_stabilization(counts in counts_strategy(15, 3), seed in any::<u64>()) {
        let field = InstructionField::new(seed, 0.5).unwrap();
        let eta = config(counts);
        let report = verify_least_action(&eta, eta.window(), &field, 5, seed).unwrap();
        prop_assert!(report.passed(), "{:?}", report.violations);
    }

    #[test]
    fn odometer_grows_with_window_and_mass(
        counts in counts_strategy(11, 3),
        extra in counts_strategy(11, 2),
        seed in any::<u64>(),
        grow in 0i64..6,
    ) {
        let field = InstructionField::new(seed, 0.5).unwrap();
        let eta = config(counts);
        let w = eta.window();
        let big_w = Window::new(w.lo - grow, w.hi + grow).unwrap();
        let mut big = Configuration::empty(big_w);
        for x in w.sites() {
            big.set(x, eta.count(x) + extra.get((x - w.lo) as usize).copied().unwrap_or(0)).unwrap();
        }
        let mut small = Configuration::empty(big_w);
        for x in w.sites() {
            small.set(x, eta.count(x)).unwrap();
        }
        let report = verify_monotonicity(&small, &big, w, big_w, &field).unwrap();
        prop_assert!(report.passed(), "{:?}", report.violations);
    }

    #[test]
    fn half_least_action(counts in counts_strategy(11, 3), seed in any::<u64>(), extra in 0u64..8) {
        let field = InstructionField::new(seed, 0.5).unwrap();
        let eta = config(counts);
        let report = verify_half_least_action(&eta, eta.window(), &field, 3, extra, seed).unwrap();
        prop_assert!(report.passed(), "{:?}", report.violations);
    }

    #[test]
    fn window_limit_is_non_decreasing(seed in any::<u64>(), zeta in 0.1f64..1.3) {
        let field = InstructionField::new(seed, 0.5).unwrap();
        let eta = InitialLaw::Poisson(zeta).sample(Window::centered(40), seed).unwrap();
        let m = odometer_window_limit(&eta, &[5, 10, 20, 40], &field, 0).unwrap();
        prop_assert!(m.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn psi_is_monotone(
        pairs in prop::collection::vec((0u64..8, 0u64..4), 0..12),
        gamma2 in 2.0f64..4.0,
    ) {
        let y: Vec<u64> = pairs.iter().map(|p| p.0).collect();
        let y2: Vec<u64> = pairs.iter().map(|p| p.0 + p.1).collect();
        let (a, b) = (psi_transform(&y, gamma2), psi_transform(&y2, gamma2));
        prop_assert_eq!(a.len(), y.len());
        prop_assert!(a.iter().zip(&b).all(|(a, b)| a <= b));
    }

    #[test]
    fn walk_kernel_is_harmonic(q in 0.5f64..0.99, x in 1u64..1000) {
        let k = HWalkKernel::new(q).unwrap();
        prop_assert!(k.harmonicity_residual(x) <= 1e-12);
        let p = k.up_probability(x as i64).unwrap();
        prop_assert!(p > 0.0 && p <= 1.0);
    }

    #[test]
    fn diagonal_tail_telescopes(q in 0.5f64..0.95, s in 1i64..60) {
        let k = HWalkKernel::new(q).unwrap();
        let product: f64 = (1..=s).map(|x| k.up_probability(x).unwrap()).product();
        let tail = k.diagonal_tail(s).unwrap();
        prop_assert!((tail / product - 1.0).abs() < 1e-12);
        prop_assert!(k.diagonal_tail(s + 1).unwrap() <= tail);
    }

    #[test]
    fn parity_decays_geometrically(p1 in 0.0f64..=1.0, n in 0u32..40) {
        let p = parity_exact(ParityProcess { p1, n });
        let expect = 0.5 * (2.0 * p1 - 1.0).abs().powi(n as i32);
        prop_assert!(((p - 0.5).abs() - expect).abs() < 1e-12);
    }

    #[test]
    fn wilson_band_contains_the_estimate(n in 1u64..5000, frac in 0.0f64..=1.0) {
        let k = (frac * n as f64) as u64;
        let (lo, hi) = wilson(k, n, 3.0);
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
    }

    #[test]
    fn batched_instructions_match_single_lookups(seed in any::<u64>(), q in 0.0f64..=1.0, x in -500i64..500, j0 in 1u64..1000) {
        for f in [InstructionField::new(seed, q).unwrap(), InstructionField::new(seed, q).unwrap().reflected()] {
            let bits = f.instruction_bits(f.site_key(x), x, j0);
            for b in 0..64 {
                let right = bits >> b & 1 == 1;
                prop_assert_eq!(right, f.instruction(x, j0 + b) == Direction::Right);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn settlements_keep_their_invariants(seed in any::<u64>(), zeta in 0.2f64..0.5, q in 0.5f64..0.8) {
        let field = InstructionField::new(seed, q).unwrap();
        let opts = SettleOptions { step_cap: 2_000_000, ..SettleOptions::default() };
        let s = match settle(zeta, &field, seed, 12, 600, opts) {
            Err(Error::ExplorerCap { .. }) => return Ok(()),
            r => r.unwrap(),
        };
        for (k, t) in s.traces.iter().enumerate() {
            let b_prev = s.barriers[k];
            prop_assert_eq!(Extended::Finite(t.barrier), b_prev);
            if s.barriers.get(k + 1).is_some_and(|b| b.is_finite()) {
                prop_assert!(t.b > b_prev && t.b <= Extended::Finite(t.start));
            }
        }
        if s.succeeded() {
            let r = replay_semi_legal(&s, &field).unwrap();
            prop_assert_eq!(r.odometer.get(0), 0);
        }
    }
}
