// SPDX-License-Identifier: Apache-2.0

//! Per-run results.

use serde::Serialize;

use crate::baselines::PolicyKind;
use crate::sim::tasks::TaskTotals;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Counters {
    pub tasks_emitted: u64,
    pub tasks_completed: u64,
    pub tasks_in_flight: u64,
    pub tasks_dropped: u64,
    pub devices: u32,
    pub devices_placed: u32,
    pub placement_rejections: u64,
    /// Container moves actually carried out.
    pub module_moves: u64,
    pub rounds_started: u64,
    pub rounds_completed: u64,
    pub failures_injected: u64,
    pub recoveries: u64,
    pub round_timeouts: u64,
    /// C1-C3 violations found on committed placements.
    pub constraint_violations: u64,
    pub crashes: u64,
    pub events: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub technique: PolicyKind,
    pub app: String,
    pub horizon_s: f64,
    pub seed: u64,
    pub devices: u32,
    /// Mean placement deployment time over placed devices.
    pub pdt_s: f64,
    pub artt_s: f64,
    pub aect_j: f64,
    pub awct: f64,
    /// Handovers that started a migration round.
    pub migrations: u64,
    pub cmt_s: f64,
    pub cmec_j: f64,
    pub cmwc: f64,
    /// Tasks that hit a migration downtime window.
    pub tit: u64,
    pub fr_mode: bool,
    pub oracle_gap: Option<f64>,
    pub fully_placed_at_horizon: bool,
    pub counters: Counters,
    /// (policy cost, optimal cost) per placed device when the oracle ran.
    #[serde(skip)]
    pub oracle_pairs: Vec<(f64, f64)>,
    #[serde(skip)]
    pub tasks: TaskTotals,
}

impl Metrics {
    pub fn new(technique: PolicyKind, app: &str, horizon_s: f64, seed: u64) -> Self {
        Self {
            technique,
            app: app.to_string(),
            horizon_s,
            seed,
            devices: 0,
            pdt_s: 0.0,
            artt_s: 0.0,
            aect_j: 0.0,
            awct: 0.0,
            migrations: 0,
            cmt_s: 0.0,
            cmec_j: 0.0,
            cmwc: 0.0,
            tit: 0,
            fr_mode: false,
            oracle_gap: None,
            fully_placed_at_horizon: false,
            counters: Counters::default(),
            oracle_pairs: Vec::new(),
            tasks: TaskTotals::default(),
        }
    }
}

/// Relative gap of the mean policy cost over the mean optimal cost.
pub fn optimality_gap(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let policy = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let opt = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    if opt <= 0.0 {
        return None;
    }
    Some((policy - opt) / opt)
}
