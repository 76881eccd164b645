// SPDX-License-Identifier: Apache-2.0

//! Cost arithmetic: hierarchical routing, per-module time and device energy,
//! schedule and application cost, and container migration cost.
//!
//! Links are modelled as independent delay/bandwidth pipes. There is no
//! contention between flows.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::app::{AppDag, ModuleId};
use crate::topology::{ServerId, Topology, TopologyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("no route from {from} to {to} (stuck at {at})")]
    NoRoute { from: ServerId, to: ServerId, at: ServerId },
    #[error("route from {from} to {to} exceeds {limit} hops")]
    RouteTooLong { from: ServerId, to: ServerId, limit: usize },
    #[error("server {0} is not alive")]
    DeadServer(ServerId),
    #[error("module {0} has no server")]
    Unplaced(ModuleId),
    #[error("server {0} has no compute capacity")]
    ZeroCpu(ServerId),
    #[error("empty candidate server set")]
    EmptyServerSet,
    #[error("placement violates constraints: {}", format_violations(.0))]
    Constraint(Vec<Violation>),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub w1: f64,
    pub w2: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { w1: 0.5, w2: 0.5 }
    }
}

impl CostWeights {
    pub const TIME_ONLY: Self = Self { w1: 1.0, w2: 0.0 };
    pub const ENERGY_ONLY: Self = Self { w1: 0.0, w2: 1.0 };

    pub fn new(w1: f64, w2: f64) -> Result<Self, CostError> {
        let w = Self { w1, w2 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), CostError> {
        for (name, v) in [("w1", self.w1), ("w2", self.w2)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CostError::InvalidParameter(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn combine(&self, time: f64, energy: f64) -> f64 {
        self.w1 * time + self.w2 * energy
    }
}

/// Power draw of an IoT device in watts.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyProfile {
    pub p_cpu: f64,
    pub p_idle: f64,
    pub p_tx: f64,
}

impl Default for EnergyProfile {
    fn default() -> Self {
        Self { p_cpu: 0.9, p_idle: 0.3, p_tx: 1.3 }
    }
}

impl EnergyProfile {
    pub fn validate(&self) -> Result<(), CostError> {
        for (name, v) in [("p_cpu", self.p_cpu), ("p_idle", self.p_idle), ("p_tx", self.p_tx)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CostError::InvalidParameter(format!("{name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Routing rule that produced a hop.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NstRule {
    /// Destination is higher up: go to the parent.
    UpToHigher,
    /// A child subtree contains the destination.
    DownToChild,
    /// Same level and the destination is a cluster member.
    ClusterSameLevel,
    /// Same level, not clustered with the destination.
    ParentSameLevel,
    /// Higher level; a cluster member's subtree contains the destination.
    ClusterFromAbove,
    /// Higher level and neither children nor cluster members reach it.
    ParentFromAbove,
    Arrived,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum HopKind {
    Up,
    Down,
    Cluster,
    Arrived,
}

impl NstRule {
    pub fn kind(self) -> HopKind {
        match self {
            NstRule::UpToHigher | NstRule::ParentSameLevel | NstRule::ParentFromAbove => HopKind::Up,
            NstRule::DownToChild => HopKind::Down,
            NstRule::ClusterSameLevel | NstRule::ClusterFromAbove => HopKind::Cluster,
            NstRule::Arrived => HopKind::Arrived,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Hop {
    pub from: ServerId,
    pub next: ServerId,
    pub rule: NstRule,
}

impl Hop {
    pub fn kind(&self) -> HopKind {
        self.rule.kind()
    }
}

/// One routing step from `current` towards `dest`.
pub fn next_hop(topo: &Topology, current: ServerId, dest: ServerId) -> Result<Hop, CostError> {
    let cur = topo.node(current)?;
    topo.node(dest)?;
    let hop = |next, rule| Ok(Hop { from: current, next, rule });
    if current == dest {
        return hop(current, NstRule::Arrived);
    }
    let up = |rule| match cur.parent {
        Some(p) if topo.is_alive(p) => hop(p, rule),
        _ => Err(CostError::NoRoute { from: current, to: dest, at: current }),
    };
    if current.level < dest.level {
        return up(NstRule::UpToHigher);
    }
    if current.level == dest.level {
        if cur.cluster_members.contains(&dest) && topo.is_alive(dest) {
            return hop(dest, NstRule::ClusterSameLevel);
        }
        return up(NstRule::ParentSameLevel);
    }
    // BTreeSet iteration is ascending, so the first match has the smallest index.
    if let Some(c) = cur.children.iter().find(|c| topo.is_alive(**c) && topo.reaches(**c, dest)) {
        return hop(*c, NstRule::DownToChild);
    }
    if let Some(c) = cur
        .cluster_members
        .iter()
        .find(|c| topo.is_alive(**c) && topo.reaches(**c, dest))
    {
        return hop(*c, NstRule::ClusterFromAbove);
    }
    up(NstRule::ParentFromAbove)
}

/// Upper bound on route length used to detect malformed topologies.
pub fn hop_limit(topo: &Topology) -> usize {
    2 * (topo.max_fog_level() as usize + 2) + topo.len()
}

/// Full hop sequence from `src` to `dst`, excluding the terminal `Arrived`.
pub fn route(topo: &Topology, src: ServerId, dst: ServerId) -> Result<Vec<Hop>, CostError> {
    let limit = hop_limit(topo);
    let mut hops = Vec::new();
    let mut cur = src;
    loop {
        let h = next_hop(topo, cur, dst)?;
        if h.rule == NstRule::Arrived {
            return Ok(hops);
        }
        hops.push(h);
        if hops.len() > limit {
            return Err(CostError::RouteTooLong { from: src, to: dst, limit });
        }
        cur = h.next;
    }
}

fn hop_latency(topo: &Topology, h: &Hop) -> f64 {
    let links = topo.links();
    match h.kind() {
        HopKind::Up => links.up_latency(h.from.level),
        HopKind::Down => links.down_latency(h.from.level),
        HopKind::Cluster => links.cluster_latency(h.from, h.next),
        HopKind::Arrived => 0.0,
    }
}

fn hop_bandwidth(topo: &Topology, h: &Hop) -> f64 {
    let links = topo.links();
    match h.kind() {
        HopKind::Up => links.up_bandwidth(h.from.level),
        HopKind::Down => links.down_bandwidth(h.from.level),
        HopKind::Cluster => links.cluster_bandwidth(h.from.level),
        HopKind::Arrived => f64::INFINITY,
    }
}

/// Latency and transfer time of a route, plus the device energy for the
/// transfer. Computed in one walk.
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct PathCost {
    pub latency: f64,
    pub transfer: f64,
    pub transfer_energy: f64,
}

pub fn path_cost(
    topo: &Topology,
    profile: &EnergyProfile,
    payload_bits: f64,
    src: ServerId,
    dst: ServerId,
) -> Result<PathCost, CostError> {
    let hops = route(topo, src, dst)?;
    let mut out = PathCost::default();
    let last = hops.len().saturating_sub(1);
    for (k, h) in hops.iter().enumerate() {
        let t = payload_bits / hop_bandwidth(topo, h);
        out.latency += hop_latency(topo, h);
        out.transfer += t;
        let device_end = (k == 0 && src.is_device()) || (k == last && dst.is_device());
        out.transfer_energy += t * if device_end { profile.p_tx } else { profile.p_idle };
    }
    Ok(out)
}

pub fn transmission_time(topo: &Topology, payload_bits: f64, src: ServerId, dst: ServerId) -> Result<f64, CostError> {
    Ok(route(topo, src, dst)?
        .iter()
        .map(|h| payload_bits / hop_bandwidth(topo, h))
        .sum())
}

pub fn internodal_latency(topo: &Topology, src: ServerId, dst: ServerId) -> Result<f64, CostError> {
    Ok(route(topo, src, dst)?.iter().map(|h| hop_latency(topo, h)).sum())
}

/// Device energy for moving `payload_bits` from `src` to `dst`. Hops that
/// touch the device are charged at transmit power, everything else at idle.
pub fn transmission_energy(
    topo: &Topology,
    profile: &EnergyProfile,
    payload_bits: f64,
    src: ServerId,
    dst: ServerId,
) -> Result<f64, CostError> {
    Ok(path_cost(topo, profile, payload_bits, src, dst)?.transfer_energy)
}

pub fn internodal_energy(topo: &Topology, profile: &EnergyProfile, src: ServerId, dst: ServerId) -> Result<f64, CostError> {
    Ok(internodal_latency(topo, src, dst)? * profile.p_idle)
}

/// Module-to-server assignment for one device's application.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub device: ServerId,
    pub assignment: Vec<Option<ServerId>>,
}

impl Placement {
    /// Pinned modules go to the device, everything else is unassigned.
    pub fn new(dag: &AppDag, device: ServerId) -> Self {
        let assignment = dag.modules.iter().map(|m| m.pinned.then_some(device)).collect();
        Self { device, assignment }
    }

    pub fn get(&self, m: ModuleId) -> Option<ServerId> {
        self.assignment.get(m).copied().flatten()
    }

    pub fn set(&mut self, m: ModuleId, s: ServerId) {
        self.assignment[m] = Some(s);
    }

    pub fn clear(&mut self, m: ModuleId) {
        self.assignment[m] = None;
    }

    pub fn is_complete(&self) -> bool {
        self.assignment.iter().all(Option::is_some)
    }

    pub fn unassigned(&self) -> impl Iterator<Item = ModuleId> + '_ {
        self.assignment.iter().enumerate().filter(|(_, s)| s.is_none()).map(|(m, _)| m)
    }

    /// Containers this placement needs on each server. Pinned modules do not
    /// occupy a container.
    pub fn container_usage(&self, dag: &AppDag) -> BTreeMap<ServerId, u32> {
        let mut out = BTreeMap::new();
        for m in dag.placeable() {
            if let Some(s) = self.get(m) {
                *out.entry(s).or_insert(0) += 1;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    /// C1: a placeable module has no server.
    Unassigned { module: ModuleId },
    /// C1: a pinned module is not on its device.
    PinnedOffDevice { module: ModuleId, server: ServerId },
    /// C1: a placeable module sits on a device.
    OnDevice { module: ModuleId, server: ServerId },
    /// C1: the server is unknown or not alive.
    BadServer { module: ModuleId, server: ServerId },
    /// C2.
    OverCapacity { server: ServerId, used: u32, capacity: u32 },
    /// C3: a flow goes from a later schedule to an earlier or equal one.
    Precedence { from: ModuleId, to: ModuleId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Unassigned { module } => write!(f, "C1: module {module} unassigned"),
            Violation::PinnedOffDevice { module, server } => {
                write!(f, "C1: pinned module {module} placed on {server}")
            }
            Violation::OnDevice { module, server } => write!(f, "C1: module {module} placed on device {server}"),
            Violation::BadServer { module, server } => {
                write!(f, "C1: module {module} placed on unavailable server {server}")
            }
            Violation::OverCapacity { server, used, capacity } => {
                write!(f, "C2: server {server} uses {used} of {capacity} containers")
            }
            Violation::Precedence { from, to } => write!(f, "C3: module {to} may run before {from}"),
        }
    }
}

/// Checks C1-C3. `usage` gives the total container count per server
/// including this placement; without it the topology's active counters are
/// used.
pub fn validate(
    topo: &Topology,
    dag: &AppDag,
    placement: &Placement,
    usage: Option<&BTreeMap<ServerId, u32>>,
) -> Vec<Violation> {
    let mut out = Vec::new();
    for (m, module) in dag.modules.iter().enumerate() {
        match placement.get(m) {
            None => out.push(Violation::Unassigned { module: m }),
            Some(s) if module.pinned && s != placement.device => {
                out.push(Violation::PinnedOffDevice { module: m, server: s })
            }
            Some(s) if !module.pinned && s.is_device() => out.push(Violation::OnDevice { module: m, server: s }),
            Some(s) if !topo.is_alive(s) => out.push(Violation::BadServer { module: m, server: s }),
            Some(_) => {}
        }
    }
    for s in placement.container_usage(dag).keys() {
        let Some(node) = topo.get(*s) else { continue };
        let used = usage
            .and_then(|u| u.get(s).copied())
            .unwrap_or(node.active_containers);
        if used > node.container_capacity {
            out.push(Violation::OverCapacity { server: *s, used, capacity: node.container_capacity });
        }
    }
    let to = &dag.schedules().to_value;
    for f in &dag.flows {
        if to[f.to] <= to[f.from] {
            out.push(Violation::Precedence { from: f.from, to: f.to });
        }
    }
    out
}

/// Checks that `order` never lists a module before one of its predecessors.
pub fn check_precedence(dag: &AppDag, order: &[ModuleId]) -> Vec<Violation> {
    let mut pos = vec![usize::MAX; dag.len()];
    for (i, &m) in order.iter().enumerate() {
        pos[m] = i;
    }
    dag.flows
        .iter()
        .filter(|f| pos[f.from] != usize::MAX && pos[f.to] != usize::MAX && pos[f.to] < pos[f.from])
        .map(|f| Violation::Precedence { from: f.from, to: f.to })
        .collect()
}

/// Time and energy of one module for one task.
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct ModuleCost {
    pub exe_time: f64,
    pub lat_time: f64,
    pub tra_time: f64,
    pub exe_energy: f64,
    pub lat_energy: f64,
    pub tra_energy: f64,
}

impl ModuleCost {
    pub fn time(&self) -> f64 {
        self.exe_time + self.lat_time + self.tra_time
    }

    pub fn energy(&self) -> f64 {
        self.exe_energy + self.lat_energy + self.tra_energy
    }
}

/// Cost of `m`. When `partial` is set, flows from unassigned predecessors are
/// skipped; otherwise they are an error. Returns `None` for an unassigned `m`
/// in partial mode.
pub fn module_cost_terms(
    topo: &Topology,
    dag: &AppDag,
    profile: &EnergyProfile,
    placement: &Placement,
    m: ModuleId,
    partial: bool,
) -> Result<Option<ModuleCost>, CostError> {
    let server = match placement.get(m) {
        Some(s) => s,
        None if partial => return Ok(None),
        None => return Err(CostError::Unplaced(m)),
    };
    let node = topo.node(server)?;
    if node.cpu_mips <= 0.0 {
        return Err(CostError::ZeroCpu(server));
    }
    let mut c = ModuleCost::default();
    let mut mi = 0.0;
    for &k in dag.incoming(m) {
        let f = &dag.flows[k];
        let src = match placement.get(f.from) {
            Some(s) => s,
            None if partial => continue,
            None => return Err(CostError::Unplaced(f.from)),
        };
        mi += f.instructions_mi;
        let p = path_cost(topo, profile, f.payload_bits, src, server)?;
        c.lat_time = c.lat_time.max(p.latency);
        c.tra_time = c.tra_time.max(p.transfer);
        c.lat_energy = c.lat_energy.max(p.latency * profile.p_idle);
        c.tra_energy = c.tra_energy.max(p.transfer_energy);
    }
    c.exe_time = mi / node.cpu_mips;
    c.exe_energy = c.exe_time * if server.is_device() { profile.p_cpu } else { profile.p_idle };
    Ok(Some(c))
}

pub fn module_time(topo: &Topology, dag: &AppDag, placement: &Placement, m: ModuleId) -> Result<f64, CostError> {
    let profile = EnergyProfile::default();
    Ok(module_cost_terms(topo, dag, &profile, placement, m, false)?
        .map(|c| c.time())
        .unwrap_or(0.0))
}

pub fn module_energy(
    topo: &Topology,
    dag: &AppDag,
    profile: &EnergyProfile,
    placement: &Placement,
    m: ModuleId,
) -> Result<f64, CostError> {
    Ok(module_cost_terms(topo, dag, profile, placement, m, false)?
        .map(|c| c.energy())
        .unwrap_or(0.0))
}

/// Per-schedule and total cost of an application.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AppCost {
    /// `Γ` per schedule.
    pub schedule_time: Vec<f64>,
    /// `Θ` per schedule.
    pub schedule_energy: Vec<f64>,
    pub time: f64,
    pub energy: f64,
    pub weighted: f64,
}

impl AppCost {
    /// Elapsed time from task emission until schedule `t` starts.
    pub fn offset(&self, t: usize) -> f64 {
        self.schedule_time[..t].iter().sum()
    }
}

pub fn schedule_cost(
    topo: &Topology,
    dag: &AppDag,
    placement: &Placement,
    weights: CostWeights,
    profile: &EnergyProfile,
    t: usize,
) -> Result<f64, CostError> {
    let (g, th) = schedule_terms(topo, dag, profile, placement, t, false)?;
    Ok(weights.combine(g, th))
}

fn schedule_terms(
    topo: &Topology,
    dag: &AppDag,
    profile: &EnergyProfile,
    placement: &Placement,
    t: usize,
    partial: bool,
) -> Result<(f64, f64), CostError> {
    let mut g: f64 = 0.0;
    let mut th: f64 = 0.0;
    for &m in &dag.schedules().schedules[t] {
        if let Some(c) = module_cost_terms(topo, dag, profile, placement, m, partial)? {
            g = g.max(c.time());
            th = th.max(c.energy());
        }
    }
    Ok((g, th))
}

fn evaluate(
    topo: &Topology,
    dag: &AppDag,
    placement: &Placement,
    weights: CostWeights,
    profile: &EnergyProfile,
    partial: bool,
) -> Result<AppCost, CostError> {
    let n = dag.schedules().len();
    let mut out = AppCost {
        schedule_time: Vec::with_capacity(n),
        schedule_energy: Vec::with_capacity(n),
        ..AppCost::default()
    };
    for t in 0..n {
        let (g, th) = schedule_terms(topo, dag, profile, placement, t, partial)?;
        out.schedule_time.push(g);
        out.schedule_energy.push(th);
        out.time += g;
        out.energy += th;
    }
    out.weighted = weights.combine(out.time, out.energy);
    Ok(out)
}

/// Cost of a complete placement after checking C1-C3.
pub fn app_cost(
    topo: &Topology,
    dag: &AppDag,
    placement: &Placement,
    weights: CostWeights,
    profile: &EnergyProfile,
    usage: Option<&BTreeMap<ServerId, u32>>,
) -> Result<AppCost, CostError> {
    let v = validate(topo, dag, placement, usage);
    if !v.is_empty() {
        return Err(CostError::Constraint(v));
    }
    evaluate(topo, dag, placement, weights, profile, false)
}

/// Cost of a complete placement without constraint checks. Used for running
/// tasks, where the placement was validated when it was committed.
pub fn app_cost_unchecked(
    topo: &Topology,
    dag: &AppDag,
    placement: &Placement,
    weights: CostWeights,
    profile: &EnergyProfile,
) -> Result<AppCost, CostError> {
    evaluate(topo, dag, placement, weights, profile, false)
}

/// Cost counting only flows whose both ends are assigned.
pub fn partial_app_cost(
    topo: &Topology,
    dag: &AppDag,
    placement: &Placement,
    weights: CostWeights,
    profile: &EnergyProfile,
) -> Result<AppCost, CostError> {
    evaluate(topo, dag, placement, weights, profile, true)
}

/// How much extra service cost a migration may introduce.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Epsilon {
    /// Fraction of the old application cost.
    Relative(f64),
    Absolute(f64),
}

impl Epsilon {
    pub fn resolve(&self, old_cost: f64) -> f64 {
        match *self {
            Epsilon::Relative(f) => f * old_cost.abs(),
            Epsilon::Absolute(a) => a,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MigrationParams {
    /// Constant stop plus resume overhead, seconds.
    pub i_mig: f64,
    pub epsilon: Epsilon,
    /// Share of container RAM moved during downtime, drawn per migration.
    pub dump_fraction: [f64; 2],
}

impl Default for MigrationParams {
    fn default() -> Self {
        Self { i_mig: 0.050, epsilon: Epsilon::Relative(0.05), dump_fraction: [0.05, 0.10] }
    }
}

impl MigrationParams {
    pub fn validate(&self) -> Result<(), CostError> {
        if !(self.i_mig.is_finite() && self.i_mig >= 0.0) {
            return Err(CostError::InvalidParameter(format!("i_mig = {} must be >= 0", self.i_mig)));
        }
        let e = match self.epsilon {
            Epsilon::Relative(v) | Epsilon::Absolute(v) => v,
        };
        if !(e.is_finite() && e >= 0.0) {
            return Err(CostError::InvalidParameter(format!("epsilon = {e} must be >= 0")));
        }
        let [lo, hi] = self.dump_fraction;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(CostError::InvalidParameter(format!(
                "dump_fraction [{lo}, {hi}] must satisfy 0 < lo <= hi <= 1"
            )));
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct MigrationCost {
    pub time: f64,
    pub energy: f64,
    pub weighted: f64,
}

/// Downtime and device energy of moving one container from `from` to `to`.
#[allow(clippy::too_many_arguments)]
pub fn module_migration_cost(
    topo: &Topology,
    profile: &EnergyProfile,
    params: &MigrationParams,
    dump_bits: f64,
    from: ServerId,
    to: ServerId,
    remaining_mi: f64,
    weights: CostWeights,
) -> Result<MigrationCost, CostError> {
    let node = topo.node(to)?;
    if node.cpu_mips <= 0.0 {
        return Err(CostError::ZeroCpu(to));
    }
    let p = path_cost(topo, profile, dump_bits, from, to)?;
    let exec = remaining_mi / node.cpu_mips;
    let exec_power = if to.is_device() { profile.p_cpu } else { profile.p_idle };
    let time = p.latency + params.i_mig + p.transfer + exec;
    let energy = (p.latency + params.i_mig) * profile.p_idle + p.transfer_energy + exec * exec_power;
    Ok(MigrationCost { time, energy, weighted: weights.combine(time, energy) })
}

/// Schedule-level migration cost: maxima over the moved modules.
pub fn schedule_migration_cost(costs: &[MigrationCost], weights: CostWeights) -> MigrationCost {
    let time = costs.iter().map(|c| c.time).fold(0.0, f64::max);
    let energy = costs.iter().map(|c| c.energy).fold(0.0, f64::max);
    MigrationCost { time, energy, weighted: weights.combine(time, energy) }
}

/// `new <= old + eps`, inclusive.
pub fn cost_admissible(old_cost: f64, new_cost: f64, epsilon: Epsilon) -> bool {
    new_cost <= old_cost + epsilon.resolve(old_cost)
}

pub fn migration_admissible(
    topo: &Topology,
    dag: &AppDag,
    old: &Placement,
    new: &Placement,
    weights: CostWeights,
    profile: &EnergyProfile,
    epsilon: Epsilon,
) -> Result<bool, CostError> {
    let a = app_cost_unchecked(topo, dag, old, weights, profile)?.weighted;
    let b = app_cost_unchecked(topo, dag, new, weights, profile)?.weighted;
    Ok(cost_admissible(a, b, epsilon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::app::tests::{diamond, flow, module};
    use crate::topology::tests::figure_one;
    use crate::topology::{LinkParams, NodeSpec, Point, TopologySpec};

    const EPS: f64 = 1e-12;

    fn s(h: u8, i: u32) -> ServerId {
        ServerId::new(h, i)
    }

    fn fig1_with_device() -> Topology {
        let mut spec = figure_one();
        spec.links = LinkParams {
            lat_up: vec![0.005, 0.025, 0.050, 0.150],
            lat_down: vec![0.005, 0.025, 0.050, 0.150],
            lat_cluster: vec![0.0, 0.004, 0.020, 0.0],
            bw_up: vec![100e6, 10e9, 10e9, 10e9],
            bw_down: vec![200e6, 10e9, 10e9, 10e9],
            bw_cluster: vec![1e9, 10e9, 10e9, 10e9],
            cluster_latency_overrides: vec![],
        };
        spec.nodes.push(NodeSpec {
            id: s(0, 5),
            cpu_mips: 500.0,
            capacity: 0,
            ram_mb: None,
            position: Point::default(),
            coverage_radius: 0.0,
            parent: Some(s(1, 1)),
            cluster_members: vec![],
        });
        Topology::build(&spec).unwrap()
    }

    #[test]
    fn next_hop_cases() {
        let mut t = fig1_with_device();
        assert_eq!(next_hop(&t, s(1, 1), s(2, 1)).unwrap().next, s(2, 1));
        assert_eq!(next_hop(&t, s(1, 1), s(2, 1)).unwrap().kind(), HopKind::Up);
        let h = next_hop(&t, s(2, 1), s(1, 2)).unwrap();
        assert_eq!((h.kind(), h.next), (HopKind::Down, s(1, 2)));
        let h = next_hop(&t, s(1, 1), s(1, 4)).unwrap();
        assert_eq!((h.rule, h.next), (NstRule::ParentSameLevel, s(2, 1)));
        t.add_cluster_link(s(1, 3), s(1, 4)).unwrap();
        // a clustered child does not give (2,1) a lateral route
        assert_eq!(next_hop(&t, s(2, 1), s(1, 4)).unwrap().rule, NstRule::ParentFromAbove);
        t.add_cluster_link(s(2, 1), s(2, 3)).unwrap();
        let h = next_hop(&t, s(2, 1), s(1, 4)).unwrap();
        assert_eq!((h.rule, h.next), (NstRule::ClusterFromAbove, s(2, 3)));
        assert_eq!(next_hop(&t, s(1, 3), s(1, 4)).unwrap().rule, NstRule::ClusterSameLevel);
        assert_eq!(next_hop(&t, s(3, 1), s(3, 1)).unwrap().rule, NstRule::Arrived);
    }

    #[test]
    fn no_route_from_orphan() {
        let mut t = fig1_with_device();
        t.set_parent(s(2, 2), None).unwrap();
        assert!(matches!(
            internodal_latency(&t, s(2, 2), s(1, 1)),
            Err(CostError::NoRoute { .. })
        ));
    }

    #[test]
    fn transmission_examples() {
        let t = fig1_with_device();
        assert_eq!(transmission_time(&t, 1e6, s(1, 1), s(1, 1)).unwrap(), 0.0);
        assert!((transmission_time(&t, 10e6, s(0, 5), s(1, 1)).unwrap() - 0.1).abs() < EPS);
        let mut t = t;
        t.add_cluster_link(s(1, 1), s(1, 2)).unwrap();
        // cluster links at level 1 are 10 Gbps here
        assert!((transmission_time(&t, 1e9, s(1, 1), s(1, 2)).unwrap() - 0.1).abs() < EPS);
    }

    #[test]
    fn latency_examples() {
        let t = fig1_with_device();
        assert_eq!(internodal_latency(&t, s(2, 3), s(2, 3)).unwrap(), 0.0);
        assert!((internodal_latency(&t, s(0, 5), s(1, 1)).unwrap() - 0.005).abs() < EPS);
        assert!((internodal_latency(&t, s(1, 1), s(1, 2)).unwrap() - 0.050).abs() < EPS);
    }

    #[test]
    fn energy_examples() {
        let t = fig1_with_device();
        let p = EnergyProfile::default();
        // 10 Mbit over 100 Mbps = 0.1 s at transmit power
        assert!((transmission_energy(&t, &p, 10e6, s(0, 5), s(1, 1)).unwrap() - 0.13).abs() < EPS);
        assert_eq!(transmission_energy(&t, &p, 10e6, s(1, 1), s(1, 1)).unwrap(), 0.0);
        // 1 Gbit over 10 Gbps = 0.1 s at idle power
        assert!((transmission_energy(&t, &p, 1e9, s(1, 1), s(2, 1)).unwrap() - 0.03).abs() < EPS);
        assert!((internodal_energy(&t, &p, s(0, 5), s(1, 1)).unwrap() - 0.0015).abs() < EPS);
        assert!((internodal_energy(&t, &p, s(1, 1), s(1, 2)).unwrap() - 0.015).abs() < EPS);
        // downlink into the device: last hop at transmit power
        let down = transmission_energy(&t, &p, 2e6, s(1, 1), s(0, 5)).unwrap();
        assert!((down - 2e6 / 200e6 * 1.3).abs() < EPS);
    }

    fn single_server(cpu: f64) -> Topology {
        let spec = TopologySpec {
            max_fog_level: 0,
            nodes: vec![NodeSpec {
                id: s(1, 1),
                cpu_mips: cpu,
                capacity: 10,
                ram_mb: None,
                position: Point::default(),
                coverage_radius: 0.0,
                parent: None,
                cluster_members: vec![],
            }],
            links: LinkParams::uniform(1, 0.0, 1e9, 0.0, 1e9),
        };
        Topology::build(&spec).unwrap()
    }

    #[test]
    fn module_time_ratio_and_source() {
        let t = single_server(4000.0);
        let dag = AppDag::new(
            "pair",
            vec![module("a", false), module("b", false)],
            vec![flow(0, 1, 1000.0, 0.0)],
            1.0,
        )
        .unwrap();
        let mut x = Placement::new(&dag, s(0, 1));
        x.set(0, s(1, 1));
        x.set(1, s(1, 1));
        assert!((module_time(&t, &dag, &x, 1).unwrap() - 0.25).abs() < EPS);
        assert_eq!(module_time(&t, &dag, &x, 0).unwrap(), 0.0);
        let p = EnergyProfile::default();
        assert!((module_energy(&t, &dag, &p, &x, 1).unwrap() - 0.075).abs() < EPS);
        x.clear(0);
        assert_eq!(module_time(&t, &dag, &x, 1), Err(CostError::Unplaced(0)));
    }

    #[test]
    fn exe_energy_on_device() {
        let mut t = single_server(4000.0);
        t.insert_node(crate::topology::ServerNode {
            id: s(0, 1),
            cpu_mips: 4000.0,
            container_capacity: 0,
            active_containers: 0,
            ram_capacity_mb: f64::INFINITY,
            ram_used_mb: 0.0,
            position: Point::default(),
            coverage_radius: 0.0,
            parent: Some(s(1, 1)),
            children: Default::default(),
            cluster_members: Default::default(),
            alive: true,
        })
        .unwrap();
        let dag = AppDag::new(
            "pair",
            vec![module("a", true), module("b", true)],
            vec![flow(0, 1, 1000.0, 0.0)],
            1.0,
        )
        .unwrap();
        let x = Placement::new(&dag, s(0, 1));
        let c = module_cost_terms(&t, &dag, &EnergyProfile::default(), &x, 1, false).unwrap().unwrap();
        assert!((c.exe_energy - 0.225).abs() < EPS);
    }

    #[test]
    fn schedule_max_and_weights() {
        let t = single_server(1000.0);
        let dag = diamond();
        let mut x = Placement::new(&dag, s(0, 1));
        for m in 0..5 {
            x.set(m, s(1, 1));
        }
        let p = EnergyProfile::default();
        let c = app_cost(&t, &dag, &x, CostWeights::TIME_ONLY, &p, None).unwrap();
        // every non-source module gets 100 MI per incoming flow on 1000 MIPS
        assert_eq!(c.schedule_time.len(), 4);
        assert!((c.schedule_time[1] - 0.1).abs() < EPS);
        assert!((c.schedule_time[2] - 0.2).abs() < EPS);
        assert!((c.weighted - c.time).abs() < EPS);
        let e = app_cost(&t, &dag, &x, CostWeights::ENERGY_ONLY, &p, None).unwrap();
        assert!((e.weighted - e.energy).abs() < EPS);
        assert!((schedule_cost(&t, &dag, &x, CostWeights::TIME_ONLY, &p, 2).unwrap() - 0.2).abs() < EPS);
    }

    #[test]
    fn capacity_violation_names_server() {
        let t = single_server(1000.0);
        let dag = diamond();
        let mut x = Placement::new(&dag, s(0, 1));
        for m in 0..5 {
            x.set(m, s(1, 1));
        }
        let usage = BTreeMap::from([(s(1, 1), 11)]);
        match app_cost(&t, &dag, &x, CostWeights::default(), &EnergyProfile::default(), Some(&usage)) {
            Err(CostError::Constraint(v)) => {
                assert_eq!(v, vec![Violation::OverCapacity { server: s(1, 1), used: 11, capacity: 10 }])
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn migration_cost_examples() {
        let mut t = fig1_with_device();
        t.add_cluster_link(s(1, 1), s(1, 2)).unwrap();
        for id in [s(1, 1), s(1, 2)] {
            t.node_mut(id).unwrap().cpu_mips = 4000.0;
        }
        let params = MigrationParams::default();
        let p = EnergyProfile::default();
        let w = CostWeights::default();
        let c = module_migration_cost(&t, &p, &params, 40e6, s(1, 1), s(1, 2), 100.0, w).unwrap();
        assert!((c.time - 0.083).abs() < 1e-9, "{}", c.time);
        let floor = module_migration_cost(&t, &p, &params, 40e6, s(1, 1), s(1, 1), 0.0, w).unwrap();
        assert!((floor.time - params.i_mig).abs() < EPS);
        let sched = schedule_migration_cost(&[c, floor], w);
        assert_eq!(sched.time, c.time);
    }

    #[test]
    fn admissibility_boundary() {
        assert!(cost_admissible(1.0, 1.0, Epsilon::Absolute(0.0)));
        assert!(cost_admissible(1.0, 1.25, Epsilon::Absolute(0.25)));
        assert!(!cost_admissible(1.0, 1.5, Epsilon::Absolute(0.25)));
        assert!(cost_admissible(2.0, 2.1, Epsilon::Relative(0.05)));
    }
}
