// SPDX-License-Identifier: Apache-2.0

//! Distributed application placement.
//!
//! The functions here are the decision logic a single fog server runs when a
//! placement request reaches it. They read the server's local view (its own
//! free slots and what its neighbours last advertised) and return which
//! module goes where. Message exchange, container start-up and
//! acknowledgements are driven by the simulation kernel.

use std::collections::{BTreeMap, BTreeSet};

use crate::app::{self, AppDag, ModuleId};
use crate::cost::{self, CostError, CostWeights, EnergyProfile, Placement};
use crate::topology::{ServerId, Topology};

/// Relative tolerance under which two candidate costs count as equal.
pub const COST_TIE_TOLERANCE: f64 = 1e-12;

/// Free container slots per server as the deciding node believes them to be.
pub type CapacityView = BTreeMap<ServerId, u32>;

/// Inputs shared by every placement decision for one application.
#[derive(Clone, Copy)]
pub struct DecisionContext<'a> {
    pub topo: &'a Topology,
    pub dag: &'a AppDag,
    pub weights: CostWeights,
    pub profile: &'a EnergyProfile,
}

/// Candidate servers of a node: itself, its cluster members and its parent.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReadyServers {
    /// Self and cluster members, in that order.
    pub local: Vec<ServerId>,
    pub parent: Option<ServerId>,
}

impl ReadyServers {
    pub fn all(&self) -> Vec<ServerId> {
        let mut v = self.local.clone();
        v.extend(self.parent);
        v
    }
}

/// Builds the ready-server list of `node`. Cluster members are kept only if
/// the view says they have a free slot. Servers in `excluded` are skipped.
pub fn ready_servers(
    topo: &Topology,
    node: ServerId,
    view: &CapacityView,
    excluded: &BTreeSet<ServerId>,
) -> ReadyServers {
    let mut out = ReadyServers::default();
    let Some(me) = topo.get(node) else { return out };
    if me.alive && !excluded.contains(&node) {
        out.local.push(node);
    }
    for &m in &me.cluster_members {
        if topo.is_alive(m) && !excluded.contains(&m) && view.get(&m).copied().unwrap_or(0) > 0 {
            out.local.push(m);
        }
    }
    out.parent = me.parent.filter(|p| topo.is_alive(*p) && !excluded.contains(p));
    out
}

/// Cost of the partial placement after putting `module` on `server`.
pub fn marginal_cost(
    ctx: &DecisionContext<'_>,
    placement: &Placement,
    module: ModuleId,
    server: ServerId,
) -> Result<f64, CostError> {
    let mut x = placement.clone();
    x.set(module, server);
    Ok(cost::partial_app_cost(ctx.topo, ctx.dag, &x, ctx.weights, ctx.profile)?.weighted)
}

fn better(a: (f64, ServerId), b: (f64, ServerId)) -> bool {
    let scale = a.0.abs().max(b.0.abs()).max(1e-300);
    if (a.0 - b.0).abs() <= COST_TIE_TOLERANCE * scale {
        a.1 < b.1
    } else {
        a.0 < b.0
    }
}

/// Among `candidates` with a free slot in `free`, the server with the
/// smallest resulting cost. Ties go to the lower level, then the lower index.
/// `None` means no candidate has room.
pub fn find_min_cost(
    ctx: &DecisionContext<'_>,
    candidates: &[ServerId],
    free: &CapacityView,
    placement: &Placement,
    module: ModuleId,
) -> Result<Option<ServerId>, CostError> {
    let mut best: Option<(f64, ServerId)> = None;
    for &s in candidates {
        if free.get(&s).copied().unwrap_or(0) == 0 {
            continue;
        }
        let c = marginal_cost(ctx, placement, module, s)?;
        if best.map_or(true, |b| better((c, s), b)) {
            best = Some((c, s));
        }
    }
    Ok(best.map(|(_, s)| s))
}

/// Outcome of one placement decision.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PlacementDecision {
    /// Committed assignments in decision order.
    pub assigned: Vec<(ModuleId, ServerId)>,
    /// Modules handed to the parent.
    pub escalate: Vec<ModuleId>,
    /// Modules nobody can take (no parent left).
    pub rejected: Vec<ModuleId>,
}

impl PlacementDecision {
    /// Assigned modules grouped by destination.
    pub fn by_server(&self) -> BTreeMap<ServerId, Vec<ModuleId>> {
        let mut out: BTreeMap<ServerId, Vec<ModuleId>> = BTreeMap::new();
        for &(m, s) in &self.assigned {
            out.entry(s).or_default().push(m);
        }
        out
    }
}

/// Module order used by every policy that ranks: schedule by schedule,
/// non-increasing rank, restricted to `pending`.
pub fn ranked_order(
    ctx: &DecisionContext<'_>,
    ready: &[ServerId],
    pending: &BTreeSet<ModuleId>,
) -> Result<Vec<ModuleId>, CostError> {
    let order = app::rank_modules(ctx.dag, ready, ctx.weights, ctx.profile, ctx.topo)?;
    Ok(order.into_iter().flatten().filter(|m| pending.contains(m)).collect())
}

/// Topological order without ranking, ties by module id.
pub fn schedule_order(dag: &AppDag, pending: &BTreeSet<ModuleId>) -> Vec<ModuleId> {
    dag.schedules()
        .schedules
        .iter()
        .flatten()
        .copied()
        .filter(|m| pending.contains(m))
        .collect()
}

/// DAPT decision at `node` for the modules in `pending`.
///
/// `placement` holds the modules already fixed (it is updated with the
/// decisions made here). `free` is the node's view of free slots and is
/// decremented for every commitment so later modules see the reservation.
pub fn dapt_place(
    ctx: &DecisionContext<'_>,
    ready: &ReadyServers,
    pending: &BTreeSet<ModuleId>,
    placement: &mut Placement,
    free: &mut CapacityView,
) -> Result<PlacementDecision, CostError> {
    let mut out = PlacementDecision::default();
    if pending.is_empty() {
        return Ok(out);
    }
    if ready.local.is_empty() {
        match ready.parent {
            Some(_) => out.escalate = schedule_order(ctx.dag, pending),
            None => out.rejected = schedule_order(ctx.dag, pending),
        }
        return Ok(out);
    }
    let candidates = ready.all();
    let order = ranked_order(ctx, &candidates, pending)?;
    for (k, &m) in order.iter().enumerate() {
        match find_min_cost(ctx, &candidates, free, placement, m)? {
            Some(s) => {
                placement.set(m, s);
                if let Some(f) = free.get_mut(&s) {
                    *f -= 1;
                }
                out.assigned.push((m, s));
            }
            None => {
                let rest = order[k..].to_vec();
                if ready.parent.is_some() {
                    out.escalate = rest;
                } else {
                    out.rejected = rest;
                }
                break;
            }
        }
    }
    Ok(out)
}

/// Re-runs the DAPT choice for modules whose remote placement failed. The
/// failed servers are left out of the candidate list. A parent that failed
/// as a host still receives whatever cannot be placed locally.
pub fn dapt_failure_recovery(
    ctx: &DecisionContext<'_>,
    node: ServerId,
    failed_modules: &BTreeSet<ModuleId>,
    failed_servers: &BTreeSet<ServerId>,
    placement: &mut Placement,
    view: &mut CapacityView,
) -> Result<PlacementDecision, CostError> {
    for &m in failed_modules {
        placement.clear(m);
    }
    let ready = ready_servers(ctx.topo, node, view, failed_servers);
    let mut out = dapt_place(ctx, &ready, failed_modules, placement, view)?;
    let parent_alive = ctx.topo.parent(node).is_some_and(|p| ctx.topo.is_alive(p));
    if ready.parent.is_none() && parent_alive {
        out.escalate.append(&mut out.rejected);
    }
    Ok(out)
}

/// How a server that received modules from a controller handles them: take
/// as many as fit, in the order given, and report the rest as failed.
pub fn handle_remote_placement(free_slots: u32, modules: &[ModuleId]) -> (Vec<ModuleId>, Vec<ModuleId>) {
    let k = (free_slots as usize).min(modules.len());
    (modules[..k].to_vec(), modules[k..].to_vec())
}

/// Edge-ward placement: keep modules on `node` while it has room, then hand
/// everything that is left to the parent. Cluster members are never used.
pub fn edgeward_place(
    dag: &AppDag,
    topo: &Topology,
    node: ServerId,
    pending: &BTreeSet<ModuleId>,
    placement: &mut Placement,
    free_here: u32,
) -> PlacementDecision {
    let mut out = PlacementDecision::default();
    let mut room = free_here;
    let order = schedule_order(dag, pending);
    for (k, &m) in order.iter().enumerate() {
        if room == 0 {
            let rest = order[k..].to_vec();
            if topo.parent(node).is_some_and(|p| topo.is_alive(p)) {
                out.escalate = rest;
            } else {
                out.rejected = rest;
            }
            break;
        }
        room -= 1;
        placement.set(m, node);
        out.assigned.push((m, node));
    }
    out
}

/// Greedy placement over every server with full knowledge of capacities.
pub fn global_greedy_place(
    ctx: &DecisionContext<'_>,
    pending: &BTreeSet<ModuleId>,
    placement: &mut Placement,
    free: &mut CapacityView,
) -> Result<PlacementDecision, CostError> {
    let mut out = PlacementDecision::default();
    let candidates: Vec<ServerId> = ctx
        .topo
        .servers()
        .filter(|n| n.alive)
        .map(|n| n.id)
        .collect();
    if candidates.is_empty() {
        return Err(CostError::EmptyServerSet);
    }
    let order = ranked_order(ctx, &candidates, pending)?;
    for &m in &order {
        match find_min_cost(ctx, &candidates, free, placement, m)? {
            Some(s) => {
                placement.set(m, s);
                if let Some(f) = free.get_mut(&s) {
                    *f -= 1;
                }
                out.assigned.push((m, s));
            }
            None => out.rejected.push(m),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::app::{DataFlow, Module};
    use crate::topology::{LinkParams, NodeSpec, Point, TopologySpec};

    fn s(h: u8, i: u32) -> ServerId {
        ServerId::new(h, i)
    }

    fn node(id: ServerId, cpu: f64, cap: u32, parent: Option<ServerId>) -> NodeSpec {
        NodeSpec {
            id,
            cpu_mips: cpu,
            capacity: cap,
            ram_mb: None,
            position: Point::default(),
            coverage_radius: 0.0,
            parent,
            cluster_members: vec![],
        }
    }

    /// Cloud, one L2 and two clustered L1 servers; the device hangs off (1,1).
    fn small(cap1: u32, cap2: u32, clustered: bool) -> Topology {
        let mut l11 = node(s(1, 1), 3000.0, cap1, Some(s(2, 1)));
        if clustered {
            l11.cluster_members.push(s(1, 2));
        }
        let spec = TopologySpec {
            max_fog_level: 2,
            nodes: vec![
                node(s(3, 1), 80000.0, 1000, None),
                node(s(2, 1), 8000.0, 20, Some(s(3, 1))),
                l11,
                node(s(1, 2), 4000.0, cap2, Some(s(2, 1))),
                node(s(0, 1), 500.0, 0, Some(s(1, 1))),
            ],
            links: LinkParams {
                lat_up: vec![0.005, 0.025, 0.150],
                lat_down: vec![0.005, 0.025, 0.150],
                lat_cluster: vec![0.0, 0.004, 0.020],
                bw_up: vec![100e6, 10e9, 10e9],
                bw_down: vec![200e6, 10e9, 10e9],
                bw_cluster: vec![1e9, 10e9, 10e9],
                cluster_latency_overrides: vec![],
            },
        };
        Topology::build(&spec).unwrap()
    }

    fn app() -> AppDag {
        let m = |n: &str, pinned| Module { name: n.into(), pinned, ram_mb: 60.0, max_delay_s: None };
        let f = |a, b, mi| DataFlow { from: a, to: b, instructions_mi: mi, payload_bits: 8000.0 };
        AppDag::new(
            "t",
            vec![m("sensor", true), m("a", false), m("b", false), m("c", false), m("act", true)],
            vec![f(0, 1, 40.0), f(1, 2, 200.0), f(1, 3, 10.0), f(2, 4, 2.0), f(3, 4, 2.0)],
            0.01,
        )
        .unwrap()
    }

    fn view(topo: &Topology) -> CapacityView {
        topo.servers().map(|n| (n.id, n.free_slots())).collect()
    }

    #[test]
    fn everything_fits_locally() {
        let topo = small(10, 10, false);
        let dag = app();
        let p = EnergyProfile::default();
        let ctx = DecisionContext { topo: &topo, dag: &dag, weights: CostWeights::default(), profile: &p };
        let mut x = Placement::new(&dag, s(0, 1));
        let mut free = view(&topo);
        let ready = ready_servers(&topo, s(1, 1), &free, &BTreeSet::new());
        let pending: BTreeSet<_> = dag.placeable().collect();
        let d = dapt_place(&ctx, &ready, &pending, &mut x, &mut free).unwrap();
        assert!(d.escalate.is_empty());
        assert!(d.assigned.iter().all(|&(_, srv)| srv == s(1, 1)), "{d:?}");
        assert!(x.is_complete());
    }

    #[test]
    fn full_controller_uses_cluster_member() {
        let topo = small(1, 10, true);
        let dag = app();
        let p = EnergyProfile::default();
        let ctx = DecisionContext { topo: &topo, dag: &dag, weights: CostWeights::default(), profile: &p };
        let mut x = Placement::new(&dag, s(0, 1));
        let mut free = view(&topo);
        let ready = ready_servers(&topo, s(1, 1), &free, &BTreeSet::new());
        assert_eq!(ready.local, vec![s(1, 1), s(1, 2)]);
        let pending: BTreeSet<_> = dag.placeable().collect();
        let d = dapt_place(&ctx, &ready, &pending, &mut x, &mut free).unwrap();
        let on_member = d.assigned.iter().filter(|a| a.1 == s(1, 2)).count();
        assert_eq!(on_member, 2, "{d:?}");
        assert!(d.assigned.iter().all(|a| a.1 != s(2, 1)));
    }

    #[test]
    fn no_cluster_no_room_escalates_everything() {
        let topo = small(0, 10, false);
        let dag = app();
        let p = EnergyProfile::default();
        let ctx = DecisionContext { topo: &topo, dag: &dag, weights: CostWeights::default(), profile: &p };
        let mut x = Placement::new(&dag, s(0, 1));
        let mut free = view(&topo);
        let mut ready = ready_servers(&topo, s(1, 1), &free, &BTreeSet::new());
        ready.local.clear();
        let pending: BTreeSet<_> = dag.placeable().collect();
        let d = dapt_place(&ctx, &ready, &pending, &mut x, &mut free).unwrap();
        assert_eq!(d.escalate, vec![1, 2, 3]);
        assert!(d.assigned.is_empty());
    }

    #[test]
    fn colocated_predecessor_wins_and_ties_prefer_lower_level() {
        let topo = small(10, 10, true);
        let dag = app();
        let p = EnergyProfile::default();
        let ctx = DecisionContext { topo: &topo, dag: &dag, weights: CostWeights::default(), profile: &p };
        let mut x = Placement::new(&dag, s(0, 1));
        x.set(1, s(1, 1));
        let free = view(&topo);
        let only = find_min_cost(&ctx, &[s(1, 2)], &free, &x, 3).unwrap();
        assert_eq!(only, Some(s(1, 2)));
        // module c only runs 10 MI, so the cluster hop costs more than the
        // faster member saves
        let got = find_min_cost(&ctx, &[s(1, 1), s(1, 2), s(2, 1)], &free, &x, 3).unwrap();
        assert_eq!(got, Some(s(1, 1)));
        assert!(better((1.0, s(1, 4)), (1.0, s(2, 1))));
        assert!(!better((1.0, s(2, 1)), (1.0, s(1, 4))));
    }

    #[test]
    fn remote_handling_splits_by_capacity() {
        assert_eq!(handle_remote_placement(2, &[4, 5, 6]), (vec![4, 5], vec![6]));
        assert_eq!(handle_remote_placement(0, &[4]), (vec![], vec![4]));
    }

    #[test]
    fn recovery_skips_failed_member() {
        let topo = small(0, 10, true);
        let dag = app();
        let p = EnergyProfile::default();
        let ctx = DecisionContext { topo: &topo, dag: &dag, weights: CostWeights::default(), profile: &p };
        let mut x = Placement::new(&dag, s(0, 1));
        let mut free = view(&topo);
        let failed: BTreeSet<_> = dag.placeable().collect();
        let d = dapt_failure_recovery(&ctx, s(1, 1), &failed, &BTreeSet::from([s(1, 2)]), &mut x, &mut free)
            .unwrap();
        assert!(d.assigned.iter().all(|a| a.1 == s(2, 1)), "{d:?}");
    }

    #[test]
    fn recovery_escalates_past_a_failed_parent() {
        let topo = small(0, 10, false);
        let dag = app();
        let p = EnergyProfile::default();
        let ctx = DecisionContext { topo: &topo, dag: &dag, weights: CostWeights::default(), profile: &p };
        let mut x = Placement::new(&dag, s(0, 1));
        let mut free = view(&topo);
        let failed: BTreeSet<_> = dag.placeable().collect();
        let d = dapt_failure_recovery(&ctx, s(1, 1), &failed, &BTreeSet::from([s(2, 1)]), &mut x, &mut free)
            .unwrap();
        assert!(d.assigned.is_empty() && d.rejected.is_empty(), "{d:?}");
        assert_eq!(d.escalate.len(), failed.len());
    }

    #[test]
    fn edgeward_fills_then_forwards() {
        let topo = small(2, 10, true);
        let dag = app();
        let mut x = Placement::new(&dag, s(0, 1));
        let pending: BTreeSet<_> = dag.placeable().collect();
        let d = edgeward_place(&dag, &topo, s(1, 1), &pending, &mut x, 2);
        assert_eq!(d.assigned, vec![(1, s(1, 1)), (2, s(1, 1))]);
        assert_eq!(d.escalate, vec![3]);
    }
}
