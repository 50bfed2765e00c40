//! `verify`: stabilizer lemma suites on random instances, operator identities
//! of the core, and the exact walk identities.

use std::cell::RefCell;
use std::collections::BTreeMap;

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use sandpile_core::init::InitialLaw;
use sandpile_core::stabilize::{
    check_abelian, check_half_calculus, random_legal_sequence, stabilize_parity, verify_half_least_action,
    verify_least_action, verify_monotonicity, Lemma, LemmaReport, Policy, Violation,
};
use sandpile_core::walks::{parity_exact, HWalkKernel, ParityProcess};
use sandpile_core::{
    derive_seed, Configuration, Direction, InstructionField, InstructionSource, Odometer, Window,
};
use serde::Serialize;

use crate::campaign::{stream, Campaign};
use crate::config::{ExperimentConfig, VerifyConfig};
use crate::error::LabError;
use crate::fault::FlakyField;
use crate::summary::Provenance;

/// Outcome of one exact identity, checked over `cases` inputs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityReport {
    pub name: String,
    pub cases: u64,
    pub violations: u64,
    pub max_error: f64,
    pub tolerance: f64,
}

impl IdentityReport {
    fn new(name: &str, tolerance: f64) -> Self {
        IdentityReport { name: name.into(), cases: 0, violations: 0, max_error: 0.0, tolerance }
    }

    fn record(&mut self, error: f64) {
        self.cases += 1;
        self.max_error = self.max_error.max(error);
        // NaN counts as a violation
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(error <= self.tolerance) {
            self.violations += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub provenance: Provenance,
    pub lemmas: Vec<LemmaReport>,
    pub identities: Vec<IdentityReport>,
    pub passed: bool,
}

/// One random stabilization instance: Poisson particles on `[-r, r]`.
pub struct Instance {
    pub eta: Configuration,
    pub window: Window,
    pub field: InstructionField,
    pub rng: SmallRng,
}

impl Instance {
    /// Densities cycle fastest, then left probabilities.
    pub fn new(cfg: &VerifyConfig, i: u64, seed: u64) -> Result<Self, LabError> {
        let mut rng = SmallRng::seed_from_u64(seed);
        let r = rng.random_range(1..=cfg.max_radius);
        let nd = cfg.densities.len() as u64;
        let zeta = cfg.densities[(i % nd) as usize];
        let q = cfg.qs[((i / nd) % cfg.qs.len() as u64) as usize];
        let window = Window::centered(r);
        let eta = InitialLaw::Poisson(zeta).sample(window, derive_seed(seed, 1))?;
        let field = InstructionField::new(derive_seed(seed, 2), q)?;
        Ok(Instance { eta, window, field, rng })
    }
}

fn with_source<T>(field: InstructionField, fault: bool, f: impl FnOnce(&dyn InstructionSource) -> T) -> T {
    if fault {
        f(&FlakyField::new(field))
    } else {
        f(&field)
    }
}

/// Runs `suite` once per instance and merges the reports in instance order.
/// Violations are relabelled with the instance index.
fn lemma_suite<F>(
    c: &Campaign,
    cfg: &VerifyConfig,
    fault: bool,
    lemma: Lemma,
    s: u64,
    n: u64,
    suite: F,
) -> Result<LemmaReport, LabError>
where
    F: Fn(&mut Instance, u64, &dyn InstructionSource) -> sandpile_core::Result<LemmaReport> + Sync,
{
    let parts = c.try_run(s, n, |i, seed| {
        let mut inst = Instance::new(cfg, i, seed)?;
        let mut r = with_source(inst.field, fault, |src| suite(&mut inst, seed, src))?;
        for v in &mut r.violations {
            v.instance = i;
        }
        Ok::<_, LabError>(r)
    })?;
    Ok(parts.into_iter().fold(LemmaReport::new(lemma, c.master), LemmaReport::merge))
}

/// The four orders compared by the abelian suite.
pub fn abelian_policies(seed: u64) -> [Policy; 4] {
    [Policy::RandomOrder(seed), Policy::LeftToRightSweep, Policy::GreedyMax, Policy::Worklist]
}

pub fn abelian_suite(c: &Campaign, cfg: &VerifyConfig, fault: bool) -> Result<LemmaReport, LabError> {
    lemma_suite(c, cfg, fault, Lemma::Abelian, stream::ABELIAN, cfg.instances, |inst, seed, src| {
        let mut r = LemmaReport::new(Lemma::Abelian, seed);
        let v = check_abelian(&inst.eta, inst.window, src, &abelian_policies(seed), 0)?;
        r.record(inst.window, v);
        Ok(r)
    })
}

pub fn least_action_suite(c: &Campaign, cfg: &VerifyConfig, fault: bool) -> Result<LemmaReport, LabError> {
    lemma_suite(c, cfg, fault, Lemma::LeastAction, stream::LEAST_ACTION, cfg.instances, |inst, seed, src| {
        verify_least_action(&inst.eta, inst.window, src, 1, seed)
    })
}

/// `η ≤ η'` on `V ⊆ V'`: `V'` widens `V` by up to 5 sites a side and `η'` adds
/// Poisson(0.3) particles everywhere on it.
pub fn monotonicity_suite(c: &Campaign, cfg: &VerifyConfig, fault: bool) -> Result<LemmaReport, LabError> {
    lemma_suite(c, cfg, fault, Lemma::Monotonicity, stream::MONOTONICITY, cfg.instances, |inst, seed, src| {
        let w = inst.window;
        let grow = inst.rng.random_range(0..=5);
        let big_w = Window::new(w.lo - grow, w.hi + grow)?;
        let extra = InitialLaw::Poisson(0.3).sample(big_w, derive_seed(seed, 3))?;
        let mut small = Configuration::empty(big_w);
        let mut big = extra;
        for x in w.sites() {
            small.set(x, inst.eta.count(x))?;
            big.set(x, big.count(x) + inst.eta.count(x))?;
        }
        verify_monotonicity(&small, &big, w, big_w, src)
    })
}

/// `Φ = φφ` and `m_β = ½ m̃_{β²}` along a random legal sequence `β`. A doubled
/// sequence that turns illegal is a violation too.
pub fn half_calculus_suite(c: &Campaign, cfg: &VerifyConfig, fault: bool) -> Result<LemmaReport, LabError> {
    lemma_suite(c, cfg, fault, Lemma::HalfCalculus, stream::HALF_CALCULUS, cfg.instances, |inst, seed, src| {
        let mut r = LemmaReport::new(Lemma::HalfCalculus, seed);
        let beta = random_legal_sequence(&inst.eta, inst.window, src, seed, cfg.sequence_len)?;
        let v = match check_half_calculus(&inst.eta, &beta, src, 0) {
            Err(sandpile_core::Error::SequenceViolation { index, site, .. }) => {
                Some(Violation { instance: 0, site, lhs: index as u64, rhs: beta.len() as u64 })
            }
            other => other?,
        };
        r.record(inst.window, v);
        Ok(r)
    })
}

pub fn half_least_action_suite(c: &Campaign, cfg: &VerifyConfig, fault: bool) -> Result<LemmaReport, LabError> {
    let n = cfg.half_pairs;
    lemma_suite(c, cfg, fault, Lemma::HalfLeastAction, stream::HALF_LEAST_ACTION, n, |inst, seed, src| {
        verify_half_least_action(&inst.eta, inst.window, src, 1, cfg.semi_legal_extra, seed)
    })
}

/// Logs every lookup. Only `instruction` is overridden, so batched reads
/// would show up as look-ahead; half-toppling never batches.
struct Recording<'a> {
    inner: &'a dyn InstructionSource,
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

/// Mass conservation and `u(x)` = instructions consumed at `x`, through a
/// legal half-toppling stabilization.
pub fn core_suites(c: &Campaign, cfg: &VerifyConfig, fault: bool) -> Result<[IdentityReport; 2], LabError> {
    let parts = c.try_run(stream::CONSUMPTION, cfg.instances, |i, seed| {
        let inst = Instance::new(cfg, i, seed)?;
        with_source(inst.field, fault, |src| {
            let rec = Recording { inner: src, seen: RefCell::default() };
            let mut eta = inst.eta.clone();
            let mut u = Odometer::new(inst.window);
            stabilize_parity(&mut eta, &mut u, inst.window, &rec, Policy::Worklist)?;
            let mass = (eta.total_mass() as f64 - inst.eta.total_mass() as f64).abs();
            let seen = rec.seen.into_inner();
            let bad = inst
                .window
                .sites()
                .filter(|&x| {
                    let got = seen.get(&x).map_or(&[][..], |v| &v[..]);
                    !got.iter().copied().eq(1..=u.get(x))
                })
                .count();
            Ok::<_, LabError>((mass, bad as f64))
        })
    })?;
    let mut mass = IdentityReport::new("mass_conservation", 0.0);
    let mut used = IdentityReport::new("instruction_consumption", 0.0);
    for (m, b) in parts {
        mass.record(m);
        used.record(b);
    }
    Ok([mass, used])
}

/// Sum of `n` i.i.d. summands, each even with probability `p1`, by repeated
/// convolution of the count of odd summands; returns `P[sum even]`.
pub fn parity_by_convolution(p1: f64, n: u32) -> f64 {
    let mut dist = vec![1.0];
    for _ in 0..n {
        let mut next = vec![0.0; dist.len() + 1];
        for (k, &p) in dist.iter().enumerate() {
            next[k] += p * p1;
            next[k + 1] += p * (1.0 - p1);
        }
        dist = next;
    }
    dist.iter().step_by(2).sum()
}

/// The `count` values `p1 = i/(count-1)`, endpoints included.
pub fn parity_grid(count: u32) -> Vec<f64> {
    let d = f64::from(count.max(2) - 1);
    (0..count).map(|i| f64::from(i) / d).collect()
}

pub fn walk_identities(cfg: &VerifyConfig) -> Result<Vec<IdentityReport>, LabError> {
    let tol = cfg.tolerance;
    let mut tele = IdentityReport::new("diagonal_tail_telescoping", tol);
    let mut harm = IdentityReport::new("harmonicity", tol);
    for &q in &cfg.kernel_qs {
        let k = HWalkKernel::new(q)?;
        let mut product = 1.0;
        for s in 1..=cfg.max_s as i64 {
            product *= k.up_probability(s)?;
            tele.record((k.diagonal_tail(s)? / product - 1.0).abs());
        }
        for x in 1..=cfg.harmonic_max_x {
            harm.record(k.harmonicity_residual(x));
        }
    }
    let mut oracle = IdentityReport::new("parity_convolution", tol);
    let mut decay = IdentityReport::new("parity_decay", tol);
    for p1 in parity_grid(cfg.parity_p1_count) {
        for n in 0..=cfg.parity_max_n {
            let p = parity_exact(ParityProcess { p1, n });
            oracle.record((p - parity_by_convolution(p1, n)).abs());
            decay.record(((p - 0.5).abs() - 0.5 * (2.0 * p1 - 1.0).abs().powi(n as i32)).abs());
        }
    }
    Ok(vec![tele, harm, oracle, decay])
}

pub fn run_verify(cfg: &ExperimentConfig, fault: bool) -> Result<VerifyReport, LabError> {
    let mut v = cfg.verify.clone();
    if let Some(t) = cfg.common.trials {
        v.instances = t;
        v.half_pairs = v.half_pairs.min(t);
    }
    let c = Campaign::new(cfg.common.seed, cfg.common.workers)?;
    let lemmas = vec![
        abelian_suite(&c, &v, fault)?,
        least_action_suite(&c, &v, fault)?,
        monotonicity_suite(&c, &v, fault)?,
        half_calculus_suite(&c, &v, fault)?,
        half_least_action_suite(&c, &v, fault)?,
    ];
    let mut identities: Vec<IdentityReport> = core_suites(&c, &v, fault)?.into();
    identities.extend(walk_identities(&v)?);
    let passed = lemmas.iter().all(LemmaReport::passed) && identities.iter().all(IdentityReport::passed);
    Ok(VerifyReport { provenance: Provenance::of(cfg), lemmas, identities, passed })
}
