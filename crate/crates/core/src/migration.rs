// SPDX-License-Identifier: Apache-2.0

//! Mobility-driven migration decisions.
//!
//! When a device is about to leave its controller's coverage, the controller
//! picks a new controller ([`analyze_mobility`]). The new controller then
//! asks, layer by layer, the server responsible for each previously used
//! hierarchy level to pick a destination for every module
//! ([`find_migration_destination`]). Message flow and downtime are handled by
//! the simulation kernel.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::app::{AppDag, ModuleId};
use crate::cost::{self, CostError, Epsilon, MigrationCost, MigrationParams, Placement};
use crate::placement::{CapacityView, DecisionContext, COST_TIE_TOLERANCE};
use crate::topology::{Point, ServerId, Topology};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MobilityState {
    pub device: ServerId,
    pub position: Point,
    /// Unit vector; zero when standing still.
    pub heading: Point,
    pub speed: f64,
    pub sensed: Vec<ServerId>,
}

impl MobilityState {
    pub fn velocity(&self) -> Point {
        Point::new(self.heading.x * self.speed, self.heading.y * self.speed)
    }
}

/// Time until a device at `pos` moving with `velocity` leaves the circle
/// `(center, radius)`: the larger root of `|pos + v t - center| = radius`,
/// or 0 when there is no intersection ahead.
pub fn sojourn_time(pos: Point, velocity: Point, center: Point, radius: f64) -> f64 {
    let dx = pos.x - center.x;
    let dy = pos.y - center.y;
    let a = velocity.x * velocity.x + velocity.y * velocity.y;
    let c = dx * dx + dy * dy - radius * radius;
    if a == 0.0 {
        return if c <= 0.0 { f64::INFINITY } else { 0.0 };
    }
    let b = 2.0 * (dx * velocity.x + dy * velocity.y);
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return 0.0;
    }
    let t = (-b + disc.sqrt()) / (2.0 * a);
    t.max(0.0)
}

/// True when the device is in the outer `1 - fraction` band of the coverage
/// circle and moving away from the centre, or already outside.
pub fn departure_imminent(pos: Point, velocity: Point, center: Point, radius: f64, fraction: f64) -> bool {
    let d = pos.distance(&center);
    if d > radius {
        return true;
    }
    let outward = (pos.x - center.x) * velocity.x + (pos.y - center.y) * velocity.y > 0.0;
    d >= fraction * radius && outward
}

/// Sensed servers split by whether `controller` can reach them through its
/// cluster (members, or members of members).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Reachability {
    pub reach: Vec<ServerId>,
    pub unreach: Vec<ServerId>,
}

pub fn split_reachable(topo: &Topology, controller: ServerId, sensed: &[ServerId]) -> Reachability {
    let mut known = BTreeSet::new();
    if let Some(c) = topo.get(controller) {
        for &m in &c.cluster_members {
            if !topo.is_alive(m) {
                continue;
            }
            known.insert(m);
            if let Some(mn) = topo.get(m) {
                known.extend(mn.cluster_members.iter().copied().filter(|x| topo.is_alive(*x)));
            }
        }
    }
    known.remove(&controller);
    let mut out = Reachability::default();
    for &s in sensed {
        if s == controller {
            continue;
        }
        if known.contains(&s) {
            out.reach.push(s);
        } else {
            out.unreach.push(s);
        }
    }
    out
}

/// Picks the next controller for a departing device.
///
/// Among reachable candidates with at least `needed_slots` free (known only
/// for direct cluster members), the one with the longest sojourn wins; if
/// none qualifies, the longest sojourn overall; with no reachable candidate,
/// a random unreachable one.
pub fn analyze_mobility<R: Rng + ?Sized>(
    topo: &Topology,
    controller: ServerId,
    mobility: &MobilityState,
    view: &CapacityView,
    needed_slots: u32,
    rng: &mut R,
) -> Option<ServerId> {
    let split = split_reachable(topo, controller, &mobility.sensed);
    let direct = topo.get(controller).map(|c| c.cluster_members.clone()).unwrap_or_default();
    let v = mobility.velocity();
    let sojourn = |s: ServerId| {
        topo.get(s)
            .map(|n| sojourn_time(mobility.position, v, n.position, n.coverage_radius))
            .unwrap_or(0.0)
    };
    let pick = |list: &mut dyn Iterator<Item = ServerId>| {
        let mut best: Option<(f64, ServerId)> = None;
        for s in list {
            let t = sojourn(s);
            if best.map_or(true, |(bt, bs)| t > bt || (t == bt && s < bs)) {
                best = Some((t, s));
            }
        }
        best.map(|(_, s)| s)
    };
    let sufficient = |s: &ServerId| direct.contains(s) && view.get(s).copied().unwrap_or(0) >= needed_slots;
    if let Some(s) = pick(&mut split.reach.iter().copied().filter(sufficient)) {
        return Some(s);
    }
    if let Some(s) = pick(&mut split.reach.iter().copied()) {
        return Some(s);
    }
    split.unreach.choose(rng).copied()
}

/// Nearest sensed server other than `controller`; ties by id.
pub fn nearest_sensed(topo: &Topology, controller: ServerId, mobility: &MobilityState) -> Option<ServerId> {
    let mut best: Option<(f64, ServerId)> = None;
    for &s in &mobility.sensed {
        if s == controller {
            continue;
        }
        let Some(n) = topo.get(s) else { continue };
        let d = n.position.distance(&mobility.position);
        if best.map_or(true, |(bd, bs)| d < bd || (d == bd && s < bs)) {
            best = Some((d, s));
        }
    }
    best.map(|(_, s)| s)
}

/// Modules sorted by container RAM, largest first; ties by id.
pub fn sort_by_ram(dag: &AppDag, modules: &[ModuleId]) -> Vec<ModuleId> {
    let mut v = modules.to_vec();
    v.sort_by(|&a, &b| dag.modules[b].ram_mb.total_cmp(&dag.modules[a].ram_mb).then(a.cmp(&b)));
    v
}

/// Placeable modules of `schedule`, grouped by the hierarchy level of their
/// current server and sorted by RAM inside each group.
pub fn group_by_layer(dag: &AppDag, placement: &Placement, schedule: &[ModuleId]) -> BTreeMap<u8, Vec<ModuleId>> {
    let mut out: BTreeMap<u8, Vec<ModuleId>> = BTreeMap::new();
    for &m in schedule {
        if dag.modules[m].pinned {
            continue;
        }
        if let Some(s) = placement.get(m) {
            out.entry(s.level).or_default().push(m);
        }
    }
    for v in out.values_mut() {
        *v = sort_by_ram(dag, v);
    }
    out
}

/// The server that decides for modules previously on `layer`: the new
/// controller itself for level 1, otherwise its ancestor on that level.
pub fn deciding_node(topo: &Topology, new_controller: ServerId, layer: u8) -> ServerId {
    let mut cur = new_controller;
    while cur.level < layer {
        match topo.parent(cur) {
            Some(p) if topo.is_alive(p) => cur = p,
            _ => return topo.cloud(),
        }
    }
    cur
}

/// Candidate destinations at a deciding node: itself, its cluster members and
/// its fog children.
pub fn migration_ready_servers(topo: &Topology, node: ServerId, excluded: &BTreeSet<ServerId>) -> Vec<ServerId> {
    let Some(me) = topo.get(node) else { return Vec::new() };
    let mut out = Vec::new();
    if me.alive {
        out.push(node);
    }
    out.extend(me.cluster_members.iter().copied().filter(|m| topo.is_alive(*m)));
    out.extend(me.children.iter().copied().filter(|c| !c.is_device() && topo.is_alive(*c)));
    out.retain(|s| !excluded.contains(s));
    out
}

/// Per-module inputs to a migration decision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MoveSpec {
    pub module: ModuleId,
    pub dump_bits: f64,
    pub remaining_mi: f64,
}

/// How much a migration may raise the application cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Admission {
    pub epsilon: Epsilon,
    /// Cost the new placement is held to. `None` compares against the cost
    /// of the placement being changed, under the current topology.
    pub reference: Option<f64>,
}

impl Admission {
    pub fn against_current(epsilon: Epsilon) -> Self {
        Self { epsilon, reference: None }
    }

    pub fn against(epsilon: Epsilon, reference: f64) -> Self {
        Self { epsilon, reference: Some(reference) }
    }
}

/// Scans `candidates` in ascending migration cost and returns the first one
/// whose resulting application cost is admissible. The module's current
/// server and servers without room are skipped.
pub fn find_migration_destination(
    ctx: &DecisionContext<'_>,
    params: &MigrationParams,
    admission: Admission,
    placement: &Placement,
    spec: MoveSpec,
    candidates: &[ServerId],
    free: &CapacityView,
) -> Result<Option<(ServerId, MigrationCost)>, CostError> {
    let Some(from) = placement.get(spec.module) else {
        return Err(CostError::Unplaced(spec.module));
    };
    let mut costs = Vec::new();
    for &to in candidates {
        if to == from || free.get(&to).copied().unwrap_or(0) == 0 {
            continue;
        }
        let c = cost::module_migration_cost(
            ctx.topo,
            ctx.profile,
            params,
            spec.dump_bits,
            from,
            to,
            spec.remaining_mi,
            ctx.weights,
        )?;
        costs.push((to, c));
    }
    costs.sort_by(|a, b| {
        let scale = a.1.weighted.abs().max(b.1.weighted.abs()).max(1e-300);
        if (a.1.weighted - b.1.weighted).abs() <= COST_TIE_TOLERANCE * scale {
            a.0.cmp(&b.0)
        } else {
            a.1.weighted.total_cmp(&b.1.weighted)
        }
    });
    let old = match admission.reference {
        Some(r) => r,
        None => cost::app_cost_unchecked(ctx.topo, ctx.dag, placement, ctx.weights, ctx.profile)?.weighted,
    };
    for (to, c) in costs {
        let mut x = placement.clone();
        x.set(spec.module, to);
        let new = cost::app_cost_unchecked(ctx.topo, ctx.dag, &x, ctx.weights, ctx.profile)?.weighted;
        if cost::cost_admissible(old, new, admission.epsilon) {
            return Ok(Some((to, c)));
        }
    }
    Ok(None)
}

/// Result of a migration request at one deciding node.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MigrationDecision {
    pub moves: Vec<(ModuleId, ServerId, MigrationCost)>,
    /// Modules handed to the parent.
    pub escalate: Vec<ModuleId>,
    /// Modules that keep their server because nobody above can take them.
    pub stay: Vec<ModuleId>,
}

/// Decides destinations for `modules` (already sorted by RAM) at `node`.
/// `placement` is updated with every move so later modules see it; `free` is
/// decremented for every reservation.
#[allow(clippy::too_many_arguments)]
pub fn decide_at_node(
    ctx: &DecisionContext<'_>,
    params: &MigrationParams,
    admission: Admission,
    node: ServerId,
    modules: &[MoveSpec],
    placement: &mut Placement,
    free: &mut CapacityView,
    excluded: &BTreeSet<ServerId>,
) -> Result<MigrationDecision, CostError> {
    let mut out = MigrationDecision::default();
    let has_parent = ctx.topo.parent(node).is_some_and(|p| ctx.topo.is_alive(p));
    let candidates = migration_ready_servers(ctx.topo, node, excluded);
    if candidates.is_empty() {
        for spec in modules {
            if has_parent {
                out.escalate.push(spec.module);
            } else {
                out.stay.push(spec.module);
            }
        }
        return Ok(out);
    }
    for &spec in modules {
        match find_migration_destination(ctx, params, admission, placement, spec, &candidates, free)? {
            Some((to, c)) => {
                placement.set(spec.module, to);
                if let Some(f) = free.get_mut(&to) {
                    *f -= 1;
                }
                out.moves.push((spec.module, to, c));
            }
            None if has_parent => out.escalate.push(spec.module),
            None => out.stay.push(spec.module),
        }
    }
    Ok(out)
}

/// Recovery after a failed migration: same scoring as [`decide_at_node`] but
/// over the node's placement candidates (itself, cluster members, parent)
/// minus every server that already failed for this module.
#[allow(clippy::too_many_arguments)]
pub fn mmt_failure_recovery(
    ctx: &DecisionContext<'_>,
    params: &MigrationParams,
    admission: Admission,
    node: ServerId,
    spec: MoveSpec,
    placement: &Placement,
    free: &CapacityView,
    failed_servers: &BTreeSet<ServerId>,
) -> Result<RecoveryOutcome, CostError> {
    let topo = ctx.topo;
    let mut local = Vec::new();
    if topo.is_alive(node) && !failed_servers.contains(&node) {
        local.push(node);
    }
    if let Some(me) = topo.get(node) {
        local.extend(
            me.cluster_members
                .iter()
                .copied()
                .filter(|m| topo.is_alive(*m) && !failed_servers.contains(m)),
        );
    }
    if let Some((to, c)) = find_migration_destination(ctx, params, admission, placement, spec, &local, free)? {
        return Ok(RecoveryOutcome::Move(to, c));
    }
    match topo.parent(node) {
        Some(p) if topo.is_alive(p) => Ok(RecoveryOutcome::Escalate(p)),
        _ => Ok(RecoveryOutcome::Stay),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RecoveryOutcome {
    Move(ServerId, MigrationCost),
    Escalate(ServerId),
    Stay,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::app::{DataFlow, Module};
    use crate::cost::{CostWeights, EnergyProfile};
    use crate::topology::{LinkParams, NodeSpec, TopologySpec};
    use rand::SeedableRng;

    fn s(h: u8, i: u32) -> ServerId {
        ServerId::new(h, i)
    }

    #[test]
    fn sojourn_geometry() {
        // entering a 200 m circle at its edge, heading through the centre
        let t = sojourn_time(Point::new(-200.0, 0.0), Point::new(2.0, 0.0), Point::new(0.0, 0.0), 200.0);
        assert!((t - 200.0).abs() < 1e-9);
        // just inside, heading out
        let t = sojourn_time(Point::new(199.0, 0.0), Point::new(2.0, 0.0), Point::new(0.0, 0.0), 200.0);
        assert!((t - 0.5).abs() < 1e-9);
        // circle behind the device
        let t = sojourn_time(Point::new(500.0, 0.0), Point::new(2.0, 0.0), Point::new(0.0, 0.0), 200.0);
        assert_eq!(t, 0.0);
        // off to the side, missing the circle
        let t = sojourn_time(Point::new(-500.0, 300.0), Point::new(2.0, 0.0), Point::new(0.0, 0.0), 200.0);
        assert_eq!(t, 0.0);
    }

    #[test]
    fn departure_band() {
        let c = Point::new(0.0, 0.0);
        assert!(departure_imminent(Point::new(195.0, 0.0), Point::new(1.0, 0.0), c, 200.0, 0.95));
        assert!(!departure_imminent(Point::new(195.0, 0.0), Point::new(-1.0, 0.0), c, 200.0, 0.95));
        assert!(!departure_imminent(Point::new(100.0, 0.0), Point::new(1.0, 0.0), c, 200.0, 0.95));
        assert!(departure_imminent(Point::new(250.0, 0.0), Point::new(-1.0, 0.0), c, 200.0, 0.95));
    }

    fn l1(i: u32, x: f64, cap: u32, members: &[u32]) -> NodeSpec {
        NodeSpec {
            id: s(1, i),
            cpu_mips: 3500.0,
            capacity: cap,
            ram_mb: None,
            position: Point::new(x, 0.0),
            coverage_radius: 200.0,
            parent: Some(s(2, 1)),
            cluster_members: members.iter().map(|&m| s(1, m)).collect(),
        }
    }

    fn line() -> Topology {
        let top = |id, cpu, parent| NodeSpec {
            id,
            cpu_mips: cpu,
            capacity: 50,
            ram_mb: None,
            position: Point::new(300.0, 0.0),
            coverage_radius: 0.0,
            parent,
            cluster_members: vec![],
        };
        let spec = TopologySpec {
            max_fog_level: 2,
            nodes: vec![
                top(s(3, 1), 80000.0, None),
                top(s(2, 1), 8000.0, Some(s(3, 1))),
                l1(1, 0.0, 4, &[2]),
                l1(2, 300.0, 4, &[3]),
                l1(3, 600.0, 0, &[]),
                l1(4, 900.0, 4, &[]),
            ],
            links: LinkParams::uniform(3, 0.025, 10e9, 0.004, 10e9),
        };
        Topology::build(&spec).unwrap()
    }

    #[test]
    fn mobility_prefers_long_sojourn_with_room() {
        let topo = line();
        let mob = MobilityState {
            device: s(0, 1),
            position: Point::new(190.0, 0.0),
            heading: Point::new(1.0, 0.0),
            speed: 2.0,
            sensed: vec![s(1, 1), s(1, 2)],
        };
        let view = CapacityView::from([(s(1, 2), 4), (s(1, 3), 0)]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        assert_eq!(analyze_mobility(&topo, s(1, 1), &mob, &view, 2, &mut rng), Some(s(1, 2)));
        // only the controller itself is sensed
        let alone = MobilityState { sensed: vec![s(1, 1)], ..mob.clone() };
        assert_eq!(analyze_mobility(&topo, s(1, 1), &alone, &view, 2, &mut rng), None);
        // (1,4) is not reachable through the cluster, so it is a random pick
        let far = MobilityState { sensed: vec![s(1, 4)], ..mob };
        assert_eq!(analyze_mobility(&topo, s(1, 1), &far, &view, 2, &mut rng), Some(s(1, 4)));
    }

    #[test]
    fn reachability_goes_two_cluster_hops() {
        let topo = line();
        let r = split_reachable(&topo, s(1, 1), &[s(1, 2), s(1, 3), s(1, 4)]);
        assert_eq!(r.reach, vec![s(1, 2), s(1, 3)]);
        assert_eq!(r.unreach, vec![s(1, 4)]);
    }

    #[test]
    fn full_reachable_candidates_fall_back_to_sojourn() {
        let topo = line();
        let mob = MobilityState {
            device: s(0, 1),
            position: Point::new(450.0, 0.0),
            heading: Point::new(1.0, 0.0),
            speed: 2.0,
            sensed: vec![s(1, 2), s(1, 3)],
        };
        let view = CapacityView::from([(s(1, 2), 0)]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        assert_eq!(analyze_mobility(&topo, s(1, 1), &mob, &view, 2, &mut rng), Some(s(1, 3)));
    }

    #[test]
    fn deciding_nodes_per_layer() {
        let topo = line();
        assert_eq!(deciding_node(&topo, s(1, 4), 1), s(1, 4));
        assert_eq!(deciding_node(&topo, s(1, 4), 2), s(2, 1));
        assert_eq!(deciding_node(&topo, s(1, 4), 3), s(3, 1));
    }

    fn dag() -> AppDag {
        let m = |n: &str, pinned, ram| Module { name: n.into(), pinned, ram_mb: ram, max_delay_s: None };
        let f = |a, b, mi| DataFlow { from: a, to: b, instructions_mi: mi, payload_bits: 8000.0 };
        AppDag::new(
            "t",
            vec![m("s", true, 0.0), m("a", false, 50.0), m("b", false, 75.0), m("d", true, 0.0)],
            vec![f(0, 1, 10.0), f(0, 2, 10.0), f(1, 3, 10.0), f(2, 3, 10.0)],
            0.01,
        )
        .unwrap()
    }

    #[test]
    fn ram_order_and_layers() {
        let d = dag();
        assert_eq!(sort_by_ram(&d, &[1, 2]), vec![2, 1]);
        let mut x = Placement::new(&d, s(0, 1));
        x.set(1, s(1, 1));
        x.set(2, s(2, 1));
        let g = group_by_layer(&d, &x, &[1, 2]);
        assert_eq!(g[&1], vec![1]);
        assert_eq!(g[&2], vec![2]);
    }

    #[test]
    fn destination_respects_admissibility() {
        let mut topo = line();
        topo.insert_node(crate::topology::ServerNode {
            id: s(0, 1),
            cpu_mips: 500.0,
            container_capacity: 0,
            active_containers: 0,
            ram_capacity_mb: f64::INFINITY,
            ram_used_mb: 0.0,
            position: Point::new(300.0, 0.0),
            coverage_radius: 0.0,
            parent: Some(s(1, 2)),
            children: Default::default(),
            cluster_members: Default::default(),
            alive: true,
        })
        .unwrap();
        let d = dag();
        let p = EnergyProfile::default();
        let ctx = DecisionContext { topo: &topo, dag: &d, weights: CostWeights::default(), profile: &p };
        let mut x = Placement::new(&d, s(0, 1));
        x.set(1, s(1, 1));
        x.set(2, s(1, 2));
        let free: CapacityView = topo.servers().map(|n| (n.id, n.free_slots())).collect();
        let params = MigrationParams::default();
        let spec = MoveSpec { module: 1, dump_bits: 30e6, remaining_mi: 0.0 };
        let got = find_migration_destination(&ctx, &params, Admission::against_current(Epsilon::Relative(0.05)), &x, spec, &[s(1, 1), s(1, 2)], &free)
            .unwrap();
        assert_eq!(got.map(|g| g.0), Some(s(1, 2)));
        // no candidate is within a zero budget if every move makes things worse
        let got = find_migration_destination(&ctx, &params, Admission::against_current(Epsilon::Absolute(0.0)), &x, spec, &[s(2, 1)], &free).unwrap();
        assert_eq!(got, None);
    }
}
