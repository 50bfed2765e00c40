//! Campaign summaries. Cells hold integer tallies only, so merging is exact
//! and associative; rates and intervals are derived when rendering.

use std::collections::BTreeMap;

use sandpile_core::stats::{wilson, Z3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub version: String,
    /// SHA-256 of the canonical config with worker count and output path
    /// blanked, so it is the same for every schedule.
    pub config_sha256: String,
}

impl Provenance {
    pub fn of(cfg: &ExperimentConfig) -> Self {
        let mut c = cfg.clone();
        c.common.workers = 1;
        c.common.out = Default::default();
        let digest = Sha256::digest(c.canonical().as_bytes());
        Provenance {
            seed: cfg.common.seed,
            version: VERSION.to_string(),
            config_sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        }
    }
}

/// Integer tallies of one cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub trials: u64,
    /// Bernoulli successes (success, saturation, exceedance, ...).
    pub hits: u64,
    pub violations: u64,
    /// Sum of an integer observable, for means.
    pub total: u64,
}

impl Cell {
    pub fn merge(self, o: Cell) -> Cell {
        Cell {
            trials: self.trials + o.trials,
            hits: self.hits + o.hits,
            violations: self.violations + o.violations,
            total: self.total + o.total,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellView {
    #[serde(flatten)]
    pub cell: Cell,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean: f64,
}

impl From<Cell> for CellView {
    fn from(cell: Cell) -> Self {
        let n = cell.trials;
        let (ci_low, ci_high) = wilson(cell.hits, n, Z3);
        let div = |k: u64| if n == 0 { f64::NAN } else { k as f64 / n as f64 };
        CellView { cell, rate: div(cell.hits), ci_low, ci_high, mean: div(cell.total) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CampaignSummary {
    pub command: String,
    pub provenance: Provenance,
    pub cells: BTreeMap<String, Cell>,
}

impl CampaignSummary {
    pub fn new(command: &str, provenance: Provenance) -> Self {
        CampaignSummary { command: command.into(), provenance, cells: BTreeMap::new() }
    }

    pub fn add(&mut self, key: &str, cell: Cell) {
        let e = self.cells.entry(key.to_string()).or_default();
        *e = e.merge(cell);
    }

    /// `None` when the summaries come from different campaigns.
    pub fn merge(mut self, other: CampaignSummary) -> Option<CampaignSummary> {
        if self.command != other.command || self.provenance != other.provenance {
            return None;
        }
        for (k, c) in other.cells {
            self.add(&k, c);
        }
        Some(self)
    }

    pub fn violations(&self) -> u64 {
        self.cells.values().map(|c| c.violations).sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let cells: BTreeMap<&String, CellView> = self.cells.iter().map(|(k, &c)| (k, c.into())).collect();
        serde_json::json!({
            "command": self.command,
            "provenance": self.provenance,
            "cells": cells,
            "violations": self.violations(),
        })
    }
}
