// SPDX-License-Identifier: Apache-2.0

//! Sweeps over policies, applications, horizons, seeds and device counts.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::PolicyKind;
use crate::scenario::Scenario;
use crate::sim::{self, Metrics, RunOptions, RunOutput};

/// Axes of a sweep. An empty axis means "as in the scenario".
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Matrix {
    pub policies: Vec<PolicyKind>,
    pub apps: Vec<String>,
    pub horizons: Vec<f64>,
    pub seeds: Vec<u64>,
    pub devices: Vec<u32>,
    pub failure_p: Option<f64>,
    pub recovery: Option<bool>,
    pub options: RunOptions,
}

#[derive(Clone, Debug, PartialEq, PartialOrd)]
pub struct Cell {
    pub policy: PolicyKind,
    pub app: String,
    pub horizon_s: f64,
    pub seed: u64,
    pub devices: u32,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub cell: Cell,
    pub outcome: Result<RunOutput, String>,
}

fn or_base<T: Clone>(axis: &[T], base: T) -> Vec<T> {
    if axis.is_empty() {
        vec![base]
    } else {
        axis.to_vec()
    }
}

/// Every cell of the matrix in canonical order.
pub fn cells(base: &Scenario, m: &Matrix) -> Vec<Cell> {
    let mut out = Vec::new();
    for policy in or_base(&m.policies, base.run.policy) {
        for app in or_base(&m.apps, base.devices.app.clone()) {
            for horizon_s in or_base(&m.horizons, base.run.horizon_s) {
                for seed in or_base(&m.seeds, base.run.seed) {
                    for devices in or_base(&m.devices, base.devices.count) {
                        out.push(Cell { policy, app: app.clone(), horizon_s, seed, devices });
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    out
}

/// The scenario a cell runs.
pub fn configure(base: &Scenario, m: &Matrix, cell: &Cell) -> Scenario {
    let mut s = base.clone();
    s.run.policy = cell.policy;
    s.run.horizon_s = cell.horizon_s;
    s.run.seed = cell.seed;
    s.devices.app = cell.app.clone();
    s.devices.count = cell.devices;
    if let Some(p) = m.failure_p {
        s.failure.migration_p = p;
    }
    if let Some(r) = m.recovery {
        s.failure.recovery = r;
    }
    s
}

/// Runs every cell, in parallel, and returns results in canonical order.
pub fn run_matrix(base: &Scenario, m: &Matrix) -> Vec<CellResult> {
    cells(base, m)
        .into_par_iter()
        .map(|cell| {
            let sc = configure(base, m, &cell);
            let outcome = sim::run(&sc, &m.options).map_err(|e| e.to_string());
            CellResult { cell, outcome }
        })
        .collect()
}

#[derive(Serialize)]
struct Row<'a> {
    technique: String,
    app: &'a str,
    horizon_s: f64,
    seed: u64,
    pdt_s: f64,
    artt_s: f64,
    aect_j: f64,
    awct: f64,
    migrations: u64,
    cmt_s: f64,
    cmec_j: f64,
    cmwc: f64,
    tit: u64,
    fr_mode: bool,
    oracle_gap: Option<f64>,
    devices: u32,
}

impl<'a> Row<'a> {
    fn new(m: &'a Metrics) -> Self {
        Self {
            technique: m.technique.to_string(),
            app: &m.app,
            horizon_s: m.horizon_s,
            seed: m.seed,
            pdt_s: m.pdt_s,
            artt_s: m.artt_s,
            aect_j: m.aect_j,
            awct: m.awct,
            migrations: m.migrations,
            cmt_s: m.cmt_s,
            cmec_j: m.cmec_j,
            cmwc: m.cmwc,
            tit: m.tit,
            fr_mode: m.fr_mode,
            oracle_gap: m.oracle_gap,
            devices: m.devices,
        }
    }
}

/// Writes one row per successful cell. Failed cells are skipped; the caller
/// reports them.
pub fn write_csv<W: Write>(results: &[CellResult], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut wrote = false;
    for r in results {
        if let Ok(o) = &r.outcome {
            w.serialize(Row::new(&o.metrics))?;
            wrote = true;
        }
    }
    if !wrote {
        w.write_record([
            "technique", "app", "horizon_s", "seed", "pdt_s", "artt_s", "aect_j", "awct", "migrations", "cmt_s",
            "cmec_j", "cmwc", "tit", "fr_mode", "oracle_gap", "devices",
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Event logs of all cells, each preceded by a line naming its cell.
pub fn write_events<W: Write>(results: &[CellResult], mut out: W) -> std::io::Result<()> {
    for r in results {
        let Ok(o) = &r.outcome else { continue };
        let c = &r.cell;
        let head = serde_json::json!({
            "kind": "cell", "technique": c.policy.to_string(), "app": c.app,
            "horizon_s": c.horizon_s, "seed": c.seed, "devices": c.devices,
        });
        writeln!(out, "{head}")?;
        for e in &o.events {
            writeln!(out, "{e}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_count_is_the_cross_product() {
        let base = Scenario::bundled("paper_table3").unwrap();
        let m = Matrix {
            policies: PolicyKind::ALL.to_vec(),
            apps: vec!["ECGMH".into(), "EEGTBG".into()],
            horizons: vec![100.0, 200.0, 300.0, 400.0],
            seeds: vec![1, 2, 3],
            ..Default::default()
        };
        let c = cells(&base, &m);
        assert_eq!(c.len(), 72);
        let mut sorted = c.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(sorted, c);
    }
}
