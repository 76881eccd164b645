// SPDX-License-Identifier: Apache-2.0

//! Exact placement by branch and bound, for small instances.
//!
//! Modules are branched in rank order over every candidate server. The bound
//! for a partial assignment is the exact cost of the parts already fixed plus
//! the cheapest possible execution of each unassigned module, taken per
//! schedule as a maximum. Both are valid because every cost term is
//! non-negative and the weights are non-negative.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::app::{self, AppDag, ModuleId};
use crate::cost::{self, AppCost, CostError, CostWeights, EnergyProfile, Placement};
use crate::topology::{ServerId, Topology};

pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("no placement satisfies the capacity constraints")]
    Infeasible,
    #[error("search budget of {budget} nodes exhausted")]
    BudgetExceeded { budget: u64, best: Option<Box<OracleSolution>> },
}

#[derive(Clone, Debug)]
pub struct OracleProblem<'a> {
    pub topo: &'a Topology,
    pub dag: &'a AppDag,
    pub device: ServerId,
    pub candidates: Vec<ServerId>,
    /// Slots available to this application per candidate. Missing entries
    /// mean zero.
    pub capacity: BTreeMap<ServerId, u32>,
    pub weights: CostWeights,
    pub profile: &'a EnergyProfile,
    pub node_budget: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleSolution {
    pub placement: Placement,
    pub cost: AppCost,
    pub nodes_explored: u64,
}

struct FlowCosts {
    lat: Vec<f64>,
    tra: Vec<f64>,
    tra_energy: Vec<f64>,
}

struct Search<'a> {
    dag: &'a AppDag,
    weights: CostWeights,
    p_idle: f64,
    servers: Vec<ServerId>,
    cpu: Vec<f64>,
    exe_power: Vec<f64>,
    flows: Vec<FlowCosts>,
    mi: Vec<f64>,
    lb_time: Vec<f64>,
    lb_energy: Vec<f64>,
    order: Vec<ModuleId>,
    assign: Vec<Option<usize>>,
    room: Vec<u32>,
    best: Option<(f64, Vec<Option<usize>>)>,
    explored: u64,
    budget: u64,
}

impl Search<'_> {
    fn n(&self) -> usize {
        self.servers.len()
    }

    fn bound(&self) -> f64 {
        let mut total_t = 0.0;
        let mut total_e = 0.0;
        for sched in &self.dag.schedules().schedules {
            let mut g: f64 = 0.0;
            let mut th: f64 = 0.0;
            for &m in sched {
                let (t, e) = match self.assign[m] {
                    Some(j) => {
                        let exe = self.mi[m] / self.cpu[j];
                        let (mut lat, mut tra, mut tre) = (0.0f64, 0.0f64, 0.0f64);
                        for &k in self.dag.incoming(m) {
                            let Some(i) = self.assign[self.dag.flows[k].from] else { continue };
                            let at = i * self.n() + j;
                            let fc = &self.flows[k];
                            lat = lat.max(fc.lat[at]);
                            tra = tra.max(fc.tra[at]);
                            tre = tre.max(fc.tra_energy[at]);
                        }
                        (exe + lat + tra, exe * self.exe_power[j] + lat * self.p_idle + tre)
                    }
                    None => (self.lb_time[m], self.lb_energy[m]),
                };
                g = g.max(t);
                th = th.max(e);
            }
            total_t += g;
            total_e += th;
        }
        self.weights.combine(total_t, total_e)
    }

    fn dfs(&mut self, depth: usize) -> Result<(), OracleError> {
        self.explored += 1;
        if self.explored > self.budget {
            return Err(OracleError::BudgetExceeded { budget: self.budget, best: None });
        }
        let b = self.bound();
        if let Some((best, _)) = &self.best {
            if b >= *best {
                return Ok(());
            }
        }
        if depth == self.order.len() {
            self.best = Some((b, self.assign.clone()));
            return Ok(());
        }
        let m = self.order[depth];
        // index 0 is the device, which only hosts pinned modules
        for j in 1..self.n() {
            if self.room[j] == 0 {
                continue;
            }
            self.room[j] -= 1;
            self.assign[m] = Some(j);
            let r = self.dfs(depth + 1);
            self.assign[m] = None;
            self.room[j] += 1;
            r?;
        }
        Ok(())
    }
}

/// Finds a minimum-cost complete placement subject to the capacities in
/// `problem`. Ties between equal-cost placements go to the one found first.
pub fn solve(problem: &OracleProblem<'_>) -> Result<OracleSolution, OracleError> {
    let topo = problem.topo;
    let dag = problem.dag;
    problem.weights.validate()?;
    let mut servers = vec![problem.device];
    servers.extend(problem.candidates.iter().copied().filter(|s| *s != problem.device));
    let n = servers.len();
    let mut cpu = Vec::with_capacity(n);
    let mut exe_power = Vec::with_capacity(n);
    for &s in &servers {
        let c = topo.node(s).map_err(CostError::from)?.cpu_mips;
        if c <= 0.0 {
            return Err(CostError::ZeroCpu(s).into());
        }
        cpu.push(c);
        exe_power.push(if s.is_device() { problem.profile.p_cpu } else { problem.profile.p_idle });
    }
    let mut flows = Vec::with_capacity(dag.flows.len());
    for f in &dag.flows {
        let mut fc = FlowCosts { lat: vec![0.0; n * n], tra: vec![0.0; n * n], tra_energy: vec![0.0; n * n] };
        for (i, &a) in servers.iter().enumerate() {
            for (j, &b) in servers.iter().enumerate() {
                let p = cost::path_cost(topo, problem.profile, f.payload_bits, a, b)?;
                fc.lat[i * n + j] = p.latency;
                fc.tra[i * n + j] = p.transfer;
                fc.tra_energy[i * n + j] = p.transfer_energy;
            }
        }
        flows.push(fc);
    }
    let mi: Vec<f64> = (0..dag.len())
        .map(|m| dag.incoming(m).iter().map(|&k| dag.flows[k].instructions_mi).sum())
        .collect();
    let mut lb_time = vec![0.0; dag.len()];
    let mut lb_energy = vec![0.0; dag.len()];
    for m in 0..dag.len() {
        let (mut t, mut e) = (f64::INFINITY, f64::INFINITY);
        for j in 1..n {
            let x = mi[m] / cpu[j];
            t = t.min(x);
            e = e.min(x * exe_power[j]);
        }
        if n > 1 {
            lb_time[m] = t;
            lb_energy[m] = e;
        }
    }
    let mut assign = vec![None; dag.len()];
    let mut placeable = Vec::new();
    for (m, module) in dag.modules.iter().enumerate() {
        if module.pinned {
            assign[m] = Some(0);
        } else {
            placeable.push(m);
        }
    }
    if !placeable.is_empty() && n == 1 {
        return Err(OracleError::Infeasible);
    }
    let order: Vec<ModuleId> = if placeable.is_empty() {
        Vec::new()
    } else {
        app::rank_modules(dag, &servers[1..], problem.weights, problem.profile, topo)?
            .into_iter()
            .flatten()
            .filter(|m| !dag.modules[*m].pinned)
            .collect()
    };
    let room: Vec<u32> = servers
        .iter()
        .enumerate()
        .map(|(j, s)| if j == 0 { 0 } else { problem.capacity.get(s).copied().unwrap_or(0) })
        .collect();
    let mut search = Search {
        dag,
        weights: problem.weights,
        p_idle: problem.profile.p_idle,
        servers,
        cpu,
        exe_power,
        flows,
        mi,
        lb_time,
        lb_energy,
        order,
        assign,
        room,
        best: None,
        explored: 0,
        budget: problem.node_budget,
    };
    let outcome = search.dfs(0);
    let finish = |s: &Search<'_>, a: &[Option<usize>]| -> Result<OracleSolution, OracleError> {
        let mut placement = Placement::new(dag, problem.device);
        for (m, j) in a.iter().enumerate() {
            if let Some(j) = j {
                placement.set(m, s.servers[*j]);
            }
        }
        let cost = cost::app_cost_unchecked(topo, dag, &placement, problem.weights, problem.profile)?;
        Ok(OracleSolution { placement, cost, nodes_explored: s.explored })
    };
    match outcome {
        Ok(()) => match &search.best {
            Some((_, a)) => finish(&search, a),
            None => Err(OracleError::Infeasible),
        },
        Err(OracleError::BudgetExceeded { budget, .. }) => {
            let best = match &search.best {
                Some((_, a)) => Some(Box::new(finish(&search, a)?)),
                None => None,
            };
            Err(OracleError::BudgetExceeded { budget, best })
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::app::tests::diamond;
    use crate::topology::tests::figure_one;
    use crate::topology::{Point, ServerNode};

    fn with_device(mut topo: Topology, parent: ServerId) -> Topology {
        topo.insert_node(ServerNode {
            id: ServerId::device(1),
            cpu_mips: 500.0,
            container_capacity: 0,
            active_containers: 0,
            ram_capacity_mb: f64::INFINITY,
            ram_used_mb: 0.0,
            position: Point::new(0.0, 0.0),
            coverage_radius: 0.0,
            parent: Some(parent),
            children: Default::default(),
            cluster_members: Default::default(),
            alive: true,
        })
        .unwrap();
        topo
    }

    fn brute(p: &OracleProblem<'_>) -> f64 {
        let free: Vec<ModuleId> = (0..p.dag.len()).filter(|m| !p.dag.modules[*m].pinned).collect();
        let k = p.candidates.len();
        let mut best = f64::INFINITY;
        let mut idx = vec![0usize; free.len()];
        loop {
            let mut x = Placement::new(p.dag, p.device);
            let mut used: BTreeMap<ServerId, u32> = BTreeMap::new();
            for (a, &m) in free.iter().enumerate() {
                x.set(m, p.candidates[idx[a]]);
                *used.entry(p.candidates[idx[a]]).or_default() += 1;
            }
            if used.iter().all(|(s, u)| p.capacity.get(s).copied().unwrap_or(0) >= *u) {
                let c = cost::app_cost_unchecked(p.topo, p.dag, &x, p.weights, p.profile).unwrap().weighted;
                best = best.min(c);
            }
            let mut a = 0;
            loop {
                if a == idx.len() {
                    return best;
                }
                idx[a] += 1;
                if idx[a] < k {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
        }
    }

    #[test]
    fn matches_enumeration_on_diamond() {
        let topo = with_device(Topology::build(&figure_one()).unwrap(), ServerId::new(1, 2));
        let dag = diamond();
        let profile = EnergyProfile::default();
        let candidates: Vec<ServerId> = topo.servers().map(|n| n.id).collect();
        for cap in [1u32, 2, 4] {
            let capacity = candidates.iter().map(|s| (*s, cap)).collect();
            let p = OracleProblem {
                topo: &topo,
                dag: &dag,
                device: ServerId::device(1),
                candidates: candidates.clone(),
                capacity,
                weights: CostWeights::default(),
                profile: &profile,
                node_budget: DEFAULT_NODE_BUDGET,
            };
            let sol = solve(&p).unwrap();
            let b = brute(&p);
            assert!((sol.cost.weighted - b).abs() <= 1e-12 * b.max(1.0), "cap {cap}: {} vs {b}", sol.cost.weighted);
        }
    }

    #[test]
    fn infeasible_and_budget() {
        let topo = with_device(Topology::build(&figure_one()).unwrap(), ServerId::new(1, 2));
        let dag = diamond();
        let profile = EnergyProfile::default();
        let mut p = OracleProblem {
            topo: &topo,
            dag: &dag,
            device: ServerId::device(1),
            candidates: vec![ServerId::new(1, 2)],
            capacity: BTreeMap::from([(ServerId::new(1, 2), 1)]),
            weights: CostWeights::default(),
            profile: &profile,
            node_budget: DEFAULT_NODE_BUDGET,
        };
        assert!(matches!(solve(&p), Err(OracleError::Infeasible)));
        p.candidates = topo.servers().map(|n| n.id).collect();
        p.capacity = p.candidates.iter().map(|s| (*s, 4)).collect();
        p.node_budget = 3;
        assert!(matches!(solve(&p), Err(OracleError::BudgetExceeded { budget: 3, .. })));
    }
}
