// SPDX-License-Identifier: Apache-2.0

//! Application DAGs, topological schedules and upward ranks.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{self, CostError, CostWeights, EnergyProfile};
use crate::topology::{ServerId, Topology};

/// Index of a module inside its [`AppDag`].
pub type ModuleId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AppError {
    #[error("application {app}: cycle through module {module}")]
    Cycle { app: String, module: String },
    #[error("application {app}: duplicate module name {module}")]
    DuplicateModule { app: String, module: String },
    #[error("application {app}: flow references unknown module {module}")]
    UnknownModule { app: String, module: String },
    #[error("application {app}: self-loop on module {module}")]
    SelfLoop { app: String, module: String },
    #[error("application {app}: {reason}")]
    Invalid { app: String, reason: String },
    #[error("unknown application template {0}")]
    UnknownTemplate(String),
    #[error("template parse error: {0}")]
    Parse(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Module {
    pub name: String,
    /// Sensors and actuators live on the owning device.
    pub pinned: bool,
    pub ram_mb: f64,
    /// Carried for completeness, never enforced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_delay_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataFlow {
    pub from: ModuleId,
    pub to: ModuleId,
    pub instructions_mi: f64,
    pub payload_bits: f64,
}

/// Modules grouped by topological order value. `schedules[0]` holds TO 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScheduleSet {
    pub schedules: Vec<Vec<ModuleId>>,
    pub to_value: Vec<usize>,
}

impl ScheduleSet {
    pub fn len(&self) -> usize {
        self.schedules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schedules.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AppDag {
    pub name: String,
    pub modules: Vec<Module>,
    pub flows: Vec<DataFlow>,
    pub sensor_interval: f64,
    incoming: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
    schedules: ScheduleSet,
}

impl AppDag {
    pub fn new(
        name: impl Into<String>,
        modules: Vec<Module>,
        flows: Vec<DataFlow>,
        sensor_interval: f64,
    ) -> Result<Self, AppError> {
        let name = name.into();
        let mut seen = BTreeSet::new();
        for m in &modules {
            if !seen.insert(m.name.as_str()) {
                return Err(AppError::DuplicateModule { app: name, module: m.name.clone() });
            }
            if !(m.ram_mb.is_finite() && m.ram_mb >= 0.0) {
                return Err(AppError::Invalid {
                    app: name,
                    reason: format!("module {} has invalid RAM {}", m.name, m.ram_mb),
                });
            }
        }
        if modules.is_empty() {
            return Err(AppError::Invalid { app: name, reason: "no modules".into() });
        }
        if !(sensor_interval.is_finite() && sensor_interval > 0.0) {
            return Err(AppError::Invalid {
                app: name,
                reason: format!("sensor interval must be positive, got {sensor_interval}"),
            });
        }
        let n = modules.len();
        let mut incoming = vec![Vec::new(); n];
        let mut outgoing = vec![Vec::new(); n];
        for (k, f) in flows.iter().enumerate() {
            for end in [f.from, f.to] {
                if end >= n {
                    return Err(AppError::UnknownModule { app: name, module: format!("#{end}") });
                }
            }
            if f.from == f.to {
                return Err(AppError::SelfLoop { app: name, module: modules[f.from].name.clone() });
            }
            if !(f.instructions_mi.is_finite() && f.instructions_mi >= 0.0)
                || !(f.payload_bits.is_finite() && f.payload_bits >= 0.0)
            {
                return Err(AppError::Invalid {
                    app: name,
                    reason: format!(
                        "flow {} -> {} has negative or non-finite size",
                        modules[f.from].name, modules[f.to].name
                    ),
                });
            }
            outgoing[f.from].push(k);
            incoming[f.to].push(k);
        }
        let schedules = topological_schedules(&name, &modules, &flows, &incoming, &outgoing)?;
        Ok(Self { name, modules, flows, sensor_interval, incoming, outgoing, schedules })
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }

    pub fn module_id(&self, name: &str) -> Option<ModuleId> {
        self.modules.iter().position(|m| m.name == name)
    }

    /// Indices into `flows` of the edges entering `m`.
    pub fn incoming(&self, m: ModuleId) -> &[usize] {
        &self.incoming[m]
    }

    pub fn outgoing(&self, m: ModuleId) -> &[usize] {
        &self.outgoing[m]
    }

    pub fn predecessors(&self, m: ModuleId) -> impl Iterator<Item = ModuleId> + '_ {
        self.incoming[m].iter().map(|&k| self.flows[k].from)
    }

    pub fn successors(&self, m: ModuleId) -> impl Iterator<Item = ModuleId> + '_ {
        self.outgoing[m].iter().map(|&k| self.flows[k].to)
    }

    pub fn schedules(&self) -> &ScheduleSet {
        &self.schedules
    }

    /// Modules that need a server, in ascending id order.
    pub fn placeable(&self) -> impl Iterator<Item = ModuleId> + '_ {
        (0..self.modules.len()).filter(|&m| !self.modules[m].pinned)
    }
}

fn topological_schedules(
    app: &str,
    modules: &[Module],
    flows: &[DataFlow],
    incoming: &[Vec<usize>],
    outgoing: &[Vec<usize>],
) -> Result<ScheduleSet, AppError> {
    let n = modules.len();
    let mut indeg: Vec<usize> = incoming.iter().map(Vec::len).collect();
    let mut to_value = vec![1usize; n];
    let mut queue: VecDeque<ModuleId> = (0..n).filter(|&m| indeg[m] == 0).collect();
    let mut visited = 0;
    while let Some(m) = queue.pop_front() {
        visited += 1;
        for &k in &outgoing[m] {
            let z = flows[k].to;
            to_value[z] = to_value[z].max(to_value[m] + 1);
            indeg[z] -= 1;
            if indeg[z] == 0 {
                queue.push_back(z);
            }
        }
    }
    if visited != n {
        let stuck = (0..n).find(|&m| indeg[m] > 0).unwrap_or(0);
        return Err(AppError::Cycle { app: app.to_string(), module: modules[stuck].name.clone() });
    }
    let depth = to_value.iter().copied().max().unwrap_or(0);
    let mut schedules = vec![Vec::new(); depth];
    for (m, &t) in to_value.iter().enumerate() {
        schedules[t - 1].push(m);
    }
    Ok(ScheduleSet { schedules, to_value })
}

/// Groups modules by topological order (sources get TO 1).
pub fn build_schedules(dag: &AppDag) -> ScheduleSet {
    dag.schedules.clone()
}

/// Averages used by the rank recursion, exposed for tests.
pub fn exec_cost_estimate(
    dag: &AppDag,
    module: ModuleId,
    ready: &[ServerId],
    weights: CostWeights,
    profile: &EnergyProfile,
    topo: &Topology,
) -> Result<f64, CostError> {
    let mi: f64 = dag.incoming(module).iter().map(|&k| dag.flows[k].instructions_mi).sum();
    let mut time = 0.0;
    let mut energy = 0.0;
    for &s in ready {
        let t = mi / topo.node(s)?.cpu_mips;
        time += t;
        energy += t * if s.is_device() { profile.p_cpu } else { profile.p_idle };
    }
    let k = ready.len() as f64;
    Ok(weights.w1 * time / k + weights.w2 * energy / k)
}

pub fn transfer_cost_estimate(
    payload_bits: f64,
    ready: &[ServerId],
    weights: CostWeights,
    profile: &EnergyProfile,
    topo: &Topology,
) -> Result<f64, CostError> {
    let mut time = 0.0;
    let mut energy = 0.0;
    for &a in ready {
        for &b in ready {
            time += cost::transmission_time(topo, payload_bits, a, b)?;
            energy += cost::transmission_energy(topo, profile, payload_bits, a, b)?;
        }
    }
    let k = (ready.len() * ready.len()) as f64;
    Ok(weights.w1 * time / k + weights.w2 * energy / k)
}

/// Upward rank of every module.
pub fn ranks(
    dag: &AppDag,
    ready: &[ServerId],
    weights: CostWeights,
    profile: &EnergyProfile,
    topo: &Topology,
) -> Result<Vec<f64>, CostError> {
    if ready.is_empty() {
        return Err(CostError::EmptyServerSet);
    }
    let mut rank = vec![0.0; dag.len()];
    let mut transfer: BTreeMap<u64, f64> = BTreeMap::new();
    for sched in dag.schedules().schedules.iter().rev() {
        for &v in sched {
            let mut best: f64 = 0.0;
            for &k in dag.outgoing(v) {
                let f = &dag.flows[k];
                let c = match transfer.get(&f.payload_bits.to_bits()) {
                    Some(c) => *c,
                    None => {
                        let c = transfer_cost_estimate(f.payload_bits, ready, weights, profile, topo)?;
                        transfer.insert(f.payload_bits.to_bits(), c);
                        c
                    }
                };
                best = best.max(c + rank[f.to]);
            }
            rank[v] = exec_cost_estimate(dag, v, ready, weights, profile, topo)? + best;
        }
    }
    Ok(rank)
}

/// Modules of each schedule in non-increasing rank order, ties by id.
pub fn rank_modules(
    dag: &AppDag,
    ready: &[ServerId],
    weights: CostWeights,
    profile: &EnergyProfile,
    topo: &Topology,
) -> Result<Vec<Vec<ModuleId>>, CostError> {
    let rank = ranks(dag, ready, weights, profile, topo)?;
    Ok(order_by_rank(dag, &rank))
}

pub fn order_by_rank(dag: &AppDag, rank: &[f64]) -> Vec<Vec<ModuleId>> {
    dag.schedules()
        .schedules
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.sort_by(|&a, &b| rank[b].total_cmp(&rank[a]).then(a.cmp(&b)));
            s
        })
        .collect()
}

/// A bound `[lo, hi]` or a single value, as written in template files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Range {
    Fixed(f64),
    Span([f64; 2]),
}

impl Range {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Range::Fixed(v) => v,
            Range::Span([lo, hi]) if hi > lo => rng.gen_range(lo..=hi),
            Range::Span([lo, _]) => lo,
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Range::Fixed(v) => (v, v),
            Range::Span([lo, hi]) => (lo, hi),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleTemplate {
    pub name: String,
    #[serde(default)]
    pub pinned: bool,
    #[serde(default = "default_ram")]
    pub ram_mb: Range,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_delay_s: Option<f64>,
}

fn default_ram() -> Range {
    Range::Span([50.0, 75.0])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowTemplate {
    pub from: String,
    pub to: String,
    pub instructions_mi: f64,
    pub payload_bits: f64,
}

/// Application description as stored on disk. Module RAM may be a range,
/// resolved per device when instantiated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppTemplate {
    pub name: String,
    pub sensor_interval_s: f64,
    pub modules: Vec<ModuleTemplate>,
    pub flows: Vec<FlowTemplate>,
}

const ECGMH: &str = include_str!("../apps/ecgmh.toml");
const EEGTBG: &str = include_str!("../apps/eegtbg.toml");

impl AppTemplate {
    pub fn from_toml(text: &str) -> Result<Self, AppError> {
        let t: AppTemplate = toml::from_str(text).map_err(|e| AppError::Parse(e.to_string()))?;
        t.instantiate_with(|r| r.bounds().0)?;
        Ok(t)
    }

    /// Bundled templates by name (case-insensitive).
    pub fn bundled(name: &str) -> Result<Self, AppError> {
        match name.to_ascii_lowercase().as_str() {
            "ecgmh" => Self::from_toml(ECGMH),
            "eegtbg" => Self::from_toml(EEGTBG),
            _ => Err(AppError::UnknownTemplate(name.to_string())),
        }
    }

    pub fn bundled_names() -> &'static [&'static str] {
        &["ECGMH", "EEGTBG"]
    }

    pub fn instantiate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<AppDag, AppError> {
        self.instantiate_with(|r| r.sample(rng))
    }

    fn instantiate_with(&self, mut ram: impl FnMut(&Range) -> f64) -> Result<AppDag, AppError> {
        let modules: Vec<Module> = self
            .modules
            .iter()
            .map(|m| Module {
                name: m.name.clone(),
                pinned: m.pinned,
                ram_mb: ram(&m.ram_mb),
                max_delay_s: m.max_delay_s,
            })
            .collect();
        let lookup = |n: &str| {
            modules.iter().position(|m| m.name == n).ok_or_else(|| AppError::UnknownModule {
                app: self.name.clone(),
                module: n.to_string(),
            })
        };
        let mut flows = Vec::with_capacity(self.flows.len());
        for f in &self.flows {
            flows.push(DataFlow {
                from: lookup(&f.from)?,
                to: lookup(&f.to)?,
                instructions_mi: f.instructions_mi,
                payload_bits: f.payload_bits,
            });
        }
        AppDag::new(self.name.clone(), modules, flows, self.sensor_interval_s)
    }
}
