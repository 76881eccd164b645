// SPDX-License-Identifier: Apache-2.0

//! Random instances shared by the integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use hfog::app::{AppDag, DataFlow, Module, ModuleId};
use hfog::cost::{self, CostWeights, EnergyProfile, Placement};
use hfog::topology::{LinkParams, NodeSpec, Point, ServerId, Topology, TopologySpec};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random hierarchy with at most `max_nodes` nodes, devices included.
/// Every fog node has a parent one level up; cluster links join random
/// same-level fog pairs.
pub fn random_topology(r: &mut impl Rng, max_nodes: usize) -> TopologySpec {
    let levels: u8 = r.gen_range(1..=3);
    let cloud = ServerId::new(levels + 1, 1);
    let mut budget = max_nodes.saturating_sub(1);
    let mut by_level: BTreeMap<u8, Vec<ServerId>> = BTreeMap::new();
    by_level.insert(levels + 1, vec![cloud]);
    for h in (1..=levels).rev() {
        let left_for_lower = h as usize; // one node per remaining level, devices included
        let max_here = 3.min(budget.saturating_sub(left_for_lower)).max(1);
        let n = r.gen_range(1..=max_here);
        budget = budget.saturating_sub(n);
        by_level.insert(h, (1..=n as u32).map(|i| ServerId::new(h, i)).collect());
    }
    let devices = r.gen_range(1..=budget.clamp(1, 3));
    by_level.insert(0, (1..=devices as u32).map(ServerId::device).collect());

    let mut nodes = Vec::new();
    for (&h, ids) in &by_level {
        for &id in ids {
            let parent = if h == levels + 1 { None } else { by_level[&(h + 1)].choose(r).copied() };
            let mut cluster_members = Vec::new();
            if h >= 1 && h <= levels {
                for &o in ids {
                    if o > id && r.gen_bool(0.4) {
                        cluster_members.push(o);
                    }
                }
            }
            nodes.push(NodeSpec {
                id,
                cpu_mips: r.gen_range(500.0..5000.0),
                capacity: if h == 0 { 0 } else { r.gen_range(0..=3) },
                ram_mb: None,
                position: Point::new(r.gen_range(0.0..1000.0), r.gen_range(0.0..1000.0)),
                coverage_radius: 0.0,
                parent,
                cluster_members,
            });
        }
    }
    let l = levels as usize;
    let mut table = |n: usize, lo: f64, hi: f64| (0..n).map(|_| r.gen_range(lo..hi)).collect::<Vec<_>>();
    let links = LinkParams {
        lat_up: table(l + 1, 0.001, 0.05),
        lat_down: table(l + 1, 0.001, 0.05),
        lat_cluster: table(l + 2, 0.001, 0.01),
        bw_up: table(l + 1, 1e6, 1e10),
        bw_down: table(l + 1, 1e6, 1e10),
        bw_cluster: table(l + 2, 1e6, 1e10),
        cluster_latency_overrides: Vec::new(),
    };
    TopologySpec { max_fog_level: levels, nodes, links }
}

/// A random DAG: one pinned sensor feeding `k` placeable modules, each with
/// at least one predecessor, and optionally a pinned actuator at the end.
pub fn random_dag(r: &mut impl Rng, k: usize) -> AppDag {
    let mut modules = vec![Module { name: "sensor".into(), pinned: true, ram_mb: 0.0, max_delay_s: None }];
    for i in 0..k {
        modules.push(Module { name: format!("m{i}"), pinned: false, ram_mb: r.gen_range(50.0..75.0), max_delay_s: None });
    }
    let mut flows = Vec::new();
    let flow = |r: &mut dyn rand::RngCore, from, to| DataFlow {
        from,
        to,
        instructions_mi: r.gen_range(0.0..2000.0),
        payload_bits: r.gen_range(0.0..1e7),
    };
    for to in 1..=k {
        let from = r.gen_range(0..to);
        flows.push(flow(r, from, to));
        for extra in 1..to {
            if extra != from && r.gen_bool(0.3) {
                flows.push(flow(r, extra, to));
            }
        }
    }
    if r.gen_bool(0.5) {
        modules.push(Module { name: "actuator".into(), pinned: true, ram_mb: 0.0, max_delay_s: None });
        flows.push(flow(r, k, k + 1));
    }
    AppDag::new("random", modules, flows, 0.01).expect("generated DAG is valid")
}

/// Routing straight from the declarative spec, without touching `Topology`.
pub struct Interp<'a> {
    spec: &'a TopologySpec,
    parent: BTreeMap<ServerId, ServerId>,
    children: BTreeMap<ServerId, BTreeSet<ServerId>>,
    members: BTreeMap<ServerId, BTreeSet<ServerId>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kind {
    Up,
    Down,
    Cluster,
}

impl<'a> Interp<'a> {
    pub fn new(spec: &'a TopologySpec) -> Self {
        let mut parent = BTreeMap::new();
        let mut children: BTreeMap<ServerId, BTreeSet<ServerId>> = BTreeMap::new();
        let mut members: BTreeMap<ServerId, BTreeSet<ServerId>> = BTreeMap::new();
        for n in &spec.nodes {
            if let Some(p) = n.parent {
                parent.insert(n.id, p);
                children.entry(p).or_default().insert(n.id);
            }
            for &m in &n.cluster_members {
                members.entry(n.id).or_default().insert(m);
                members.entry(m).or_default().insert(n.id);
            }
        }
        Self { spec, parent, children, members }
    }

    /// Everything below `x`, and `x` itself.
    pub fn omega(&self, x: ServerId) -> BTreeSet<ServerId> {
        let mut out = BTreeSet::from([x]);
        let mut frontier = vec![x];
        while let Some(y) = frontier.pop() {
            for &c in self.children.get(&y).into_iter().flatten() {
                if out.insert(c) {
                    frontier.push(c);
                }
            }
        }
        out
    }

    fn step(&self, cur: ServerId, dst: ServerId) -> (Kind, ServerId) {
        let none = BTreeSet::new();
        let members = self.members.get(&cur).unwrap_or(&none);
        if cur.level < dst.level {
            return (Kind::Up, self.parent[&cur]);
        }
        if cur.level == dst.level {
            if members.contains(&dst) {
                return (Kind::Cluster, dst);
            }
            return (Kind::Up, self.parent[&cur]);
        }
        let kids = self.children.get(&cur).unwrap_or(&none);
        if let Some(&c) = kids.iter().find(|c| self.omega(**c).contains(&dst)) {
            return (Kind::Down, c);
        }
        if let Some(&c) = members.iter().find(|c| self.omega(**c).contains(&dst)) {
            return (Kind::Cluster, c);
        }
        (Kind::Up, self.parent[&cur])
    }

    pub fn path(&self, src: ServerId, dst: ServerId) -> Vec<(Kind, ServerId, ServerId)> {
        let mut out = Vec::new();
        let mut cur = src;
        while cur != dst {
            let (k, next) = self.step(cur, dst);
            out.push((k, cur, next));
            cur = next;
            assert!(out.len() <= 64, "interpreter looped from {src} to {dst}");
        }
        out
    }

    fn lat(&self, k: Kind, from: ServerId) -> f64 {
        let l = &self.spec.links;
        let h = from.level as usize;
        match k {
            Kind::Up => l.lat_up[h],
            Kind::Down => l.lat_down[h - 1],
            Kind::Cluster => l.lat_cluster[h],
        }
    }

    fn bw(&self, k: Kind, from: ServerId) -> f64 {
        let l = &self.spec.links;
        let h = from.level as usize;
        match k {
            Kind::Up => l.bw_up[h],
            Kind::Down => l.bw_down[h - 1],
            Kind::Cluster => l.bw_cluster[h],
        }
    }

    /// (latency, transfer time, device transfer energy)
    pub fn cost(&self, src: ServerId, dst: ServerId, bits: f64, p: &EnergyProfile) -> (f64, f64, f64) {
        let path = self.path(src, dst);
        let (mut lat, mut tra, mut energy) = (0.0, 0.0, 0.0);
        for (i, &(k, from, _)) in path.iter().enumerate() {
            let t = bits / self.bw(k, from);
            lat += self.lat(k, from);
            tra += t;
            let touches_device = (i == 0 && src.level == 0) || (i + 1 == path.len() && dst.level == 0);
            energy += t * if touches_device { p.p_tx } else { p.p_idle };
        }
        (lat, tra, energy)
    }
}

/// A device with its application on a random hierarchy.
pub struct Instance {
    pub topo: Topology,
    pub dag: AppDag,
    pub device: ServerId,
    pub candidates: Vec<ServerId>,
    pub capacity: BTreeMap<ServerId, u32>,
}

pub fn instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let spec = random_topology(&mut r, 10);
    let topo = Topology::build(&spec).unwrap();
    let k = r.gen_range(1..=4);
    let dag = random_dag(&mut r, k);
    let device = ServerId::device(1);
    let candidates: Vec<_> = topo.servers().map(|n| n.id).collect();
    let capacity = topo.servers().map(|n| (n.id, n.container_capacity)).collect();
    Instance { topo, dag, device, candidates, capacity }
}

pub fn placeable(dag: &AppDag) -> Vec<ModuleId> {
    (0..dag.len()).filter(|m| !dag.modules[*m].pinned).collect()
}

/// Minimum over every capacity-respecting assignment.
pub fn enumerate(inst: &Instance, weights: CostWeights, profile: &EnergyProfile) -> Option<f64> {
    let free = placeable(&inst.dag);
    let n = inst.candidates.len();
    let mut best: Option<f64> = None;
    let mut idx = vec![0usize; free.len()];
    loop {
        let mut x = Placement::new(&inst.dag, inst.device);
        let mut used: BTreeMap<ServerId, u32> = BTreeMap::new();
        for (a, &m) in free.iter().enumerate() {
            let s = inst.candidates[idx[a]];
            x.set(m, s);
            *used.entry(s).or_default() += 1;
        }
        if used.iter().all(|(s, u)| *u <= inst.capacity[s]) {
            let c = cost::app_cost_unchecked(&inst.topo, &inst.dag, &x, weights, profile).unwrap().weighted;
            best = Some(best.map_or(c, |b: f64| b.min(c)));
        }
        let mut k = 0;
        loop {
            if k == idx.len() {
                return best;
            }
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}
