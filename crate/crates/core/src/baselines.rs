// SPDX-License-Identifier: Apache-2.0

//! Comparison policies: edge-ward placement and migration (MAAS) and a
//! central controller on the top fog level (Urmila).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::app::ModuleId;
use crate::cost::{self, CostError, CostWeights, EnergyProfile, MigrationCost, MigrationParams, Placement};
use crate::placement::{self, CapacityView, DecisionContext};
use crate::topology::{ServerId, Topology};

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Proposed,
    Maas,
    Urmila,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::Proposed, PolicyKind::Maas, PolicyKind::Urmila];
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::Proposed => "Proposed",
            PolicyKind::Maas => "MAAS",
            PolicyKind::Urmila => "Urmila",
        })
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "proposed" | "dapt" => Ok(PolicyKind::Proposed),
            "maas" => Ok(PolicyKind::Maas),
            "urmila" => Ok(PolicyKind::Urmila),
            _ => Err(format!("unknown policy `{s}` (expected proposed, maas or urmila)")),
        }
    }
}

/// Server hosting the central controller: the first node on the top fog
/// level, or the cloud when there is no fog level.
pub fn central_controller(topo: &Topology) -> ServerId {
    let top = topo.max_fog_level();
    topo.level(top)
        .find(|n| n.alive)
        .map(|n| n.id)
        .unwrap_or_else(|| topo.cloud())
}

/// Outcome of one edge-ward migration step at a node.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgewardStep {
    pub moves: Vec<(ModuleId, ServerId)>,
    pub stay: Vec<ModuleId>,
    pub escalate: Vec<ModuleId>,
}

/// Edge-ward migration at `node`: modules already here stay, others move
/// here while slots remain, the rest go to the parent. At the root the rest
/// stay where they are.
pub fn edgeward_migration_step(
    topo: &Topology,
    node: ServerId,
    modules: &[ModuleId],
    placement: &Placement,
    free_here: u32,
) -> EdgewardStep {
    let mut out = EdgewardStep::default();
    let mut room = free_here;
    let has_parent = topo.parent(node).is_some_and(|p| topo.is_alive(p));
    for &m in modules {
        if placement.get(m) == Some(node) {
            out.stay.push(m);
        } else if room > 0 {
            room -= 1;
            out.moves.push((m, node));
        } else if has_parent {
            out.escalate.push(m);
        } else {
            out.stay.push(m);
        }
    }
    out
}

/// Central re-placement of one module: the cheapest server over the whole
/// hierarchy given the rest of the placement. The module's own server counts
/// as having room for it. Returns `None` when it should stay.
pub fn central_migration_target(
    ctx: &DecisionContext<'_>,
    placement: &Placement,
    module: ModuleId,
    free: &CapacityView,
) -> Result<Option<ServerId>, CostError> {
    let Some(current) = placement.get(module) else {
        return Err(CostError::Unplaced(module));
    };
    let mut view = free.clone();
    *view.entry(current).or_default() += 1;
    let mut x = placement.clone();
    x.clear(module);
    let candidates: Vec<ServerId> = ctx.topo.servers().filter(|n| n.alive).map(|n| n.id).collect();
    let best = placement::find_min_cost(ctx, &candidates, &view, &x, module)?;
    Ok(best.filter(|s| *s != current))
}

/// Migration cost when the container dump is relayed through `via` instead
/// of travelling directly.
#[allow(clippy::too_many_arguments)]
pub fn relayed_migration_cost(
    topo: &Topology,
    profile: &EnergyProfile,
    params: &MigrationParams,
    dump_bits: f64,
    from: ServerId,
    via: ServerId,
    to: ServerId,
    remaining_mi: f64,
    weights: CostWeights,
) -> Result<MigrationCost, CostError> {
    let node = topo.node(to)?;
    if node.cpu_mips <= 0.0 {
        return Err(CostError::ZeroCpu(to));
    }
    let a = cost::path_cost(topo, profile, dump_bits, from, via)?;
    let b = cost::path_cost(topo, profile, dump_bits, via, to)?;
    let exec = remaining_mi / node.cpu_mips;
    let exec_power = if to.is_device() { profile.p_cpu } else { profile.p_idle };
    let lat = a.latency + b.latency;
    let time = lat + params.i_mig + a.transfer + b.transfer + exec;
    let energy = (lat + params.i_mig) * profile.p_idle + a.transfer_energy + b.transfer_energy + exec * exec_power;
    Ok(MigrationCost { time, energy, weighted: weights.combine(time, energy) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::tests::figure_one;

    fn s(h: u8, i: u32) -> ServerId {
        ServerId::new(h, i)
    }

    #[test]
    fn policy_names_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(p.to_string().parse::<PolicyKind>().unwrap(), p);
        }
        assert!("central".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn central_controller_is_first_top_fog_node() {
        let topo = Topology::build(&figure_one()).unwrap();
        assert_eq!(central_controller(&topo), s(3, 1));
    }

    #[test]
    fn relay_through_endpoint_equals_direct() {
        let topo = Topology::build(&figure_one()).unwrap();
        let p = EnergyProfile::default();
        let mp = MigrationParams::default();
        let w = CostWeights::default();
        let direct = cost::module_migration_cost(&topo, &p, &mp, 4e7, s(1, 1), s(1, 4), 30.0, w).unwrap();
        let relayed = relayed_migration_cost(&topo, &p, &mp, 4e7, s(1, 1), s(1, 1), s(1, 4), 30.0, w).unwrap();
        assert!((direct.time - relayed.time).abs() < 1e-12);
        let via_top = relayed_migration_cost(&topo, &p, &mp, 4e7, s(1, 1), s(3, 1), s(1, 4), 30.0, w).unwrap();
        assert!(via_top.time >= direct.time);
    }

    #[test]
    fn edgeward_step_fills_then_escalates() {
        let topo = Topology::build(&figure_one()).unwrap();
        let dag = crate::app::tests::diamond();
        let mut x = Placement::new(&dag, ServerId::device(1));
        for m in dag.placeable().collect::<Vec<_>>() {
            x.set(m, s(1, 1));
        }
        let mods: Vec<ModuleId> = dag.placeable().collect();
        let step = edgeward_migration_step(&topo, s(1, 4), &mods, &x, 1);
        assert_eq!(step.moves.len(), 1);
        assert_eq!(step.escalate.len(), mods.len() - 1);
        let root = edgeward_migration_step(&topo, topo.cloud(), &mods, &x, 0);
        assert_eq!(root.stay.len(), mods.len());
    }
}
