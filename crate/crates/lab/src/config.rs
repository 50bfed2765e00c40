//! Campaign configuration: a TOML file with a `[common]` block and one block
//! per command. Every field has a default, so an empty file is valid; command
//! line flags are applied on top with [`ExperimentConfig::apply`].

use std::path::{Path, PathBuf};

use sandpile_core::growth::GrowthParams;
use sandpile_core::settle::{NoRightJump, EXPLORER_STEP_CAP};
use serde::{Deserialize, Serialize};

use crate::error::LabError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub common: Common,
    pub verify: VerifyConfig,
    pub settle: SettleConfig,
    pub sweep: SweepConfig,
    pub tails: TailsConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Common {
    pub seed: u64,
    /// Worker threads. Outputs do not depend on it.
    pub workers: usize,
    pub out: PathBuf,
    /// Overrides the main count of whichever command runs.
    pub trials: Option<u64>,
}

impl Default for Common {
    fn default() -> Self {
        Common { seed: 0, workers: 1, out: PathBuf::from("out"), trials: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Instances per stabilizer suite (abelian, least action, monotonicity,
    /// half-toppling calculus). `--trials` sets this.
    pub instances: u64,
    /// Sampled (legal, semi-legal stabilizing) half-toppling pairs.
    pub half_pairs: u64,
    pub max_radius: u64,
    pub densities: Vec<f64>,
    /// Left probabilities of the instruction fields, cycled over instances.
    pub qs: Vec<f64>,
    /// Longest random legal sequence in the calculus suite.
    pub sequence_len: usize,
    /// Semi-legal moves allowed per stabilizing sequence.
    pub semi_legal_extra: u64,
    pub kernel_qs: Vec<f64>,
    pub max_s: u64,
    pub harmonic_max_x: u64,
    pub tolerance: f64,
    pub parity_max_n: u32,
    pub parity_p1_count: u32,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            instances: 1000,
            half_pairs: 500,
            max_radius: 30,
            densities: vec![0.3, 0.6, 0.9],
            qs: vec![0.5, 0.65, 0.35],
            sequence_len: 300,
            semi_legal_extra: 8,
            kernel_qs: vec![0.5, 0.6, 0.75, 0.9],
            max_s: 60,
            harmonic_max_x: 1000,
            tolerance: 1e-12,
            parity_max_n: 30,
            parity_p1_count: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowthConfig {
    pub gamma1: f64,
    pub gamma2: f64,
    pub m: u64,
    pub n: u64,
    pub epsilon: f64,
    pub rho: f64,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        GrowthConfig { gamma1: 3.2, gamma2: 2.5, m: 2, n: 4, epsilon: 0.1, rho: 0.5 }
    }
}

impl GrowthConfig {
    pub fn params(&self, zeta: f64) -> GrowthParams {
        let GrowthConfig { gamma1, gamma2, m, n, epsilon, rho } = *self;
        GrowthParams { zeta, gamma1, gamma2, m, n, epsilon, rho }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoRightJumpRule {
    StartSite,
    Unbounded,
}

impl From<NoRightJumpRule> for NoRightJump {
    fn from(r: NoRightJumpRule) -> Self {
        match r {
            NoRightJumpRule::StartSite => NoRightJump::StartSite,
            NoRightJumpRule::Unbounded => NoRightJump::Unbounded,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SettleConfig {
    pub zeta: f64,
    pub q: f64,
    pub budget: usize,
    /// Particles are sampled on `1..=window`.
    pub window: u64,
    pub runs: u64,
    /// Replay every successful settlement with semi-legal half-topplings.
    pub replay: bool,
    /// Also stabilize the settled particles and record `m(0)`.
    pub fixation: bool,
    pub no_right_jump: NoRightJumpRule,
    pub step_cap: u64,
    pub growth: GrowthConfig,
    pub tail_max_s: u64,
    /// Tail cells with fewer samples are reported as low-power.
    pub min_n: u64,
}

impl Default for SettleConfig {
    fn default() -> Self {
        SettleConfig {
            zeta: 0.3,
            q: 0.5,
            budget: 50,
            window: 2000,
            runs: 1000,
            replay: true,
            fixation: false,
            no_right_jump: NoRightJumpRule::Unbounded,
            step_cap: EXPLORER_STEP_CAP,
            growth: GrowthConfig::default(),
            tail_max_s: 12,
            min_n: 50,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Law {
    Bernoulli,
    Poisson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub zetas: Vec<f64>,
    pub qs: Vec<f64>,
    pub radii: Vec<u64>,
    /// Seeds per cell.
    pub seeds: u64,
    pub law: Law,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            zetas: vec![0.3, 1.2],
            qs: vec![0.5],
            radii: vec![100, 200, 400, 800],
            seeds: 200,
            law: Law::Poisson,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReversalConfig {
    pub enabled: bool,
    pub zeta: f64,
    pub budget: usize,
    pub window: u64,
    pub runs: u64,
    pub step_cap: u64,
    pub hwalk_samples: u64,
}

impl Default for ReversalConfig {
    fn default() -> Self {
        ReversalConfig {
            enabled: true,
            zeta: 0.3,
            budget: 20,
            window: 1000,
            runs: 200,
            step_cap: 1_000_000,
            hwalk_samples: 20_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailsConfig {
    pub qs: Vec<f64>,
    pub max_s: u64,
    /// Monte Carlo walks per kernel. `--trials` sets this.
    pub samples: u64,
    /// Walks per seeded chunk; the unit of parallel work.
    pub chunk: u64,
    pub min_n: u64,
    pub parity_max_n: u32,
    pub parity_p1s: Vec<f64>,
    pub reversal: ReversalConfig,
}

impl Default for TailsConfig {
    fn default() -> Self {
        TailsConfig {
            qs: vec![0.5, 0.6, 0.75, 0.9],
            max_s: 10,
            samples: 1_000_000,
            chunk: 20_000,
            min_n: 50,
            parity_max_n: 30,
            parity_p1s: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            reversal: ReversalConfig::default(),
        }
    }
}

/// Flags shared by every subcommand. `None` keeps the configured value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub trials: Option<u64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, LabError> {
        toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.common.seed = s;
        }
        if let Some(w) = o.workers {
            self.common.workers = w;
        }
        if let Some(out) = &o.out {
            self.common.out = out.clone();
        }
        if o.trials.is_some() {
            self.common.trials = o.trials;
        }
    }

    /// The canonical TOML text; hashed into the provenance of every summary.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let bad = |m: String| Err(LabError::Config(m));
        let prob = |name: &str, p: f64| -> Result<(), LabError> {
            if p > 0.0 && p < 1.0 {
                Ok(())
            } else {
                Err(LabError::Config(format!("{name} = {p} must lie in (0, 1)")))
            }
        };
        if self.common.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.common.trials == Some(0) {
            return bad("trials must be at least 1".into());
        }
        let v = &self.verify;
        if v.densities.is_empty() || v.qs.is_empty() || v.kernel_qs.is_empty() {
            return bad("verify lists must be non-empty".into());
        }
        for &q in &v.qs {
            prob("verify.qs", q)?;
        }
        for &z in &v.densities {
            if !(z >= 0.0 && z.is_finite()) {
                return bad(format!("verify density {z} must be finite and non-negative"));
            }
        }
        for &q in v.kernel_qs.iter().chain(&self.tails.qs) {
            if !(0.5..1.0).contains(&q) {
                return bad(format!("kernel q = {q} must lie in [1/2, 1)"));
            }
        }
        if v.max_radius == 0 {
            return bad("verify.max_radius must be at least 1".into());
        }
        let s = &self.settle;
        prob("settle.q", s.q)?;
        prob("settle.zeta", s.zeta)?;
        s.growth.params(s.zeta).validate().map_err(|e| LabError::Config(format!("settle.growth: {e}")))?;
        if s.tail_max_s == 0 {
            return bad("settle.tail_max_s must be at least 1".into());
        }
        let w = &self.sweep;
        for &q in &w.qs {
            prob("sweep.qs", q)?;
        }
        if w.radii.is_empty() || w.radii.windows(2).any(|p| p[0] >= p[1]) {
            return bad("sweep.radii must be non-empty and strictly increasing".into());
        }
        for &z in &w.zetas {
            let ok = match w.law {
                Law::Bernoulli => (0.0..=1.0).contains(&z),
                Law::Poisson => z >= 0.0 && z.is_finite(),
            };
            if !ok {
                return bad(format!("sweep density {z} is invalid for the {:?} law", w.law));
            }
        }
        let t = &self.tails;
        if t.chunk == 0 || t.max_s == 0 {
            return bad("tails.chunk and tails.max_s must be positive".into());
        }
        for &p in &t.parity_p1s {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("parity p1 = {p} must lie in [0, 1]"));
            }
        }
        prob("tails.reversal.zeta", t.reversal.zeta)?;
        Ok(())
    }
}
