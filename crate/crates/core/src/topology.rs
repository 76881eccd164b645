// SPDX-License-Identifier: Apache-2.0

//! Hierarchical server graph.
//!
//! Servers are addressed by `(level, index)`. Level 0 holds IoT devices, levels
//! `1..=L` hold fog servers and level `L + 1` holds the single cloud node
//! `(L + 1, 1)`. Every fog server has one parent one level above it; servers at
//! the same level may additionally be linked as cluster members.
//!
//! `Ω(x)` is the set made of `x` and everything reachable from `x` by following
//! children links. Routing asks `dest ∈ Ω(x)` very often, so [`Topology::reaches`]
//! answers it by walking the parent chain of `dest` (the hierarchy is at most a
//! handful of levels deep). Materialised sets are cached per revision.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("duplicate server id {0}")]
    DuplicateId(ServerId),
    #[error("unknown server {0}")]
    UnknownServer(ServerId),
    #[error("server {child} names parent {parent}, which is not exactly one level above")]
    ParentLevel { child: ServerId, parent: ServerId },
    #[error("fog server {0} has no parent")]
    MissingParent(ServerId),
    #[error("missing cloud node {0}")]
    MissingCloud(ServerId),
    #[error("cloud node {0} cannot have a parent")]
    CloudWithParent(ServerId),
    #[error("server {0} is above the cloud level")]
    AboveCloud(ServerId),
    #[error("server {0} must have index >= 1")]
    ZeroIndex(ServerId),
    #[error("cluster link {a} <-> {b} joins different levels")]
    ClusterLevel { a: ServerId, b: ServerId },
    #[error("server {0} cannot be its own cluster member")]
    SelfCluster(ServerId),
    #[error("invalid link parameter: {0}")]
    InvalidLink(String),
    #[error("invalid server parameter for {id}: {reason}")]
    InvalidServer { id: ServerId, reason: String },
    #[error("bad server id {0:?}, expected \"level,index\"")]
    Parse(String),
}

/// Position of a node in the hierarchy.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ServerId {
    pub level: u8,
    pub index: u32,
}

impl ServerId {
    pub const fn new(level: u8, index: u32) -> Self {
        Self { level, index }
    }

    pub const fn device(n: u32) -> Self {
        Self::new(0, n)
    }

    pub fn is_device(&self) -> bool {
        self.level == 0
    }
}

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.level, self.index)
    }
}

impl FromStr for ServerId {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim().trim_start_matches('(').trim_end_matches(')');
        let (h, i) = trimmed
            .split_once(',')
            .ok_or_else(|| TopologyError::Parse(s.to_string()))?;
        let level = h.trim().parse().map_err(|_| TopologyError::Parse(s.to_string()))?;
        let index = i.trim().parse().map_err(|_| TopologyError::Parse(s.to_string()))?;
        Ok(Self { level, index })
    }
}

impl Serialize for ServerId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{},{}", self.level, self.index))
    }
}

impl<'de> Deserialize<'de> for ServerId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServerNode {
    pub id: ServerId,
    pub cpu_mips: f64,
    /// Maximum number of simultaneously active containers.
    pub container_capacity: u32,
    pub active_containers: u32,
    pub ram_capacity_mb: f64,
    pub ram_used_mb: f64,
    pub position: Point,
    /// Zero means coverage is not modelled (cloud, top levels).
    pub coverage_radius: f64,
    pub parent: Option<ServerId>,
    pub children: BTreeSet<ServerId>,
    pub cluster_members: BTreeSet<ServerId>,
    pub alive: bool,
}

impl ServerNode {
    pub fn free_slots(&self) -> u32 {
        self.container_capacity.saturating_sub(self.active_containers)
    }

    pub fn free_ram_mb(&self) -> f64 {
        (self.ram_capacity_mb - self.ram_used_mb).max(0.0)
    }

    pub fn covers(&self, p: &Point) -> bool {
        self.coverage_radius > 0.0 && self.position.distance(p) <= self.coverage_radius
    }
}

/// Per-level link parameters.
///
/// Vertical links are indexed by the level of their lower end: `lat_up[0]` is
/// the device to level-1 uplink, `lat_up[1]` the level-1 to level-2 uplink and
/// so on. Cluster links are indexed by the level they live on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub lat_up: Vec<f64>,
    pub lat_down: Vec<f64>,
    pub lat_cluster: Vec<f64>,
    pub bw_up: Vec<f64>,
    pub bw_down: Vec<f64>,
    pub bw_cluster: Vec<f64>,
    /// Pair-specific cluster latencies, overriding `lat_cluster`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cluster_latency_overrides: Vec<ClusterLatency>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterLatency {
    pub a: ServerId,
    pub b: ServerId,
    pub latency: f64,
}

impl LinkParams {
    /// Uniform parameters for every level; handy in tests.
    pub fn uniform(levels: usize, lat: f64, bw: f64, lat_cluster: f64, bw_cluster: f64) -> Self {
        Self {
            lat_up: vec![lat; levels],
            lat_down: vec![lat; levels],
            lat_cluster: vec![lat_cluster; levels + 1],
            bw_up: vec![bw; levels],
            bw_down: vec![bw; levels],
            bw_cluster: vec![bw_cluster; levels + 1],
            cluster_latency_overrides: Vec::new(),
        }
    }

    fn pick(v: &[f64], i: usize, what: &str) -> f64 {
        match v.get(i).or_else(|| v.last()) {
            Some(x) => *x,
            None => panic!("link table {what} is empty"),
        }
    }

    /// Latency of a hop from `level` to its parent.
    pub fn up_latency(&self, level: u8) -> f64 {
        Self::pick(&self.lat_up, level as usize, "lat_up")
    }

    /// Latency of a hop from `level` down to one of its children.
    pub fn down_latency(&self, level: u8) -> f64 {
        Self::pick(&self.lat_down, level.saturating_sub(1) as usize, "lat_down")
    }

    pub fn up_bandwidth(&self, level: u8) -> f64 {
        Self::pick(&self.bw_up, level as usize, "bw_up")
    }

    pub fn down_bandwidth(&self, level: u8) -> f64 {
        Self::pick(&self.bw_down, level.saturating_sub(1) as usize, "bw_down")
    }

    pub fn cluster_bandwidth(&self, level: u8) -> f64 {
        Self::pick(&self.bw_cluster, level as usize, "bw_cluster")
    }

    pub fn cluster_latency(&self, a: ServerId, b: ServerId) -> f64 {
        self.cluster_latency_overrides
            .iter()
            .find(|c| (c.a == a && c.b == b) || (c.a == b && c.b == a))
            .map(|c| c.latency)
            .unwrap_or_else(|| Self::pick(&self.lat_cluster, a.level as usize, "lat_cluster"))
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let tables = [
            ("lat_up", &self.lat_up),
            ("lat_down", &self.lat_down),
            ("lat_cluster", &self.lat_cluster),
            ("bw_up", &self.bw_up),
            ("bw_down", &self.bw_down),
            ("bw_cluster", &self.bw_cluster),
        ];
        for (name, t) in tables {
            if t.is_empty() {
                return Err(TopologyError::InvalidLink(format!("{name} is empty")));
            }
            for v in t.iter() {
                let bad = if name.starts_with("lat") {
                    !v.is_finite() || *v < 0.0
                } else {
                    !v.is_finite() || *v <= 0.0
                };
                if bad {
                    return Err(TopologyError::InvalidLink(format!("{name} contains {v}")));
                }
            }
        }
        for o in &self.cluster_latency_overrides {
            if !o.latency.is_finite() || o.latency < 0.0 {
                return Err(TopologyError::InvalidLink(format!(
                    "cluster latency {} <-> {} is {}",
                    o.a, o.b, o.latency
                )));
            }
        }
        Ok(())
    }
}

/// Declarative description of one node, as found in scenario files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: ServerId,
    pub cpu_mips: f64,
    pub capacity: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ram_mb: Option<f64>,
    #[serde(default)]
    pub position: Point,
    #[serde(default)]
    pub coverage_radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<ServerId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cluster_members: Vec<ServerId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    /// Number of fog levels `L`; the cloud sits at `L + 1`.
    pub max_fog_level: u8,
    pub nodes: Vec<NodeSpec>,
    pub links: LinkParams,
}

#[derive(Default)]
struct OmegaCache {
    revision: u64,
    sets: BTreeMap<ServerId, Arc<BTreeSet<ServerId>>>,
}

pub struct Topology {
    nodes: BTreeMap<ServerId, ServerNode>,
    links: LinkParams,
    max_fog_level: u8,
    revision: u64,
    omega: Mutex<OmegaCache>,
}

impl Clone for Topology {
    fn clone(&self) -> Self {
        Self {
            nodes: self.nodes.clone(),
            links: self.links.clone(),
            max_fog_level: self.max_fog_level,
            revision: self.revision,
            omega: Mutex::new(OmegaCache::default()),
        }
    }
}

impl fmt::Debug for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Topology")
            .field("max_fog_level", &self.max_fog_level)
            .field("nodes", &self.nodes.len())
            .field("revision", &self.revision)
            .finish()
    }
}

impl Topology {
    /// Validates `spec` and builds the hierarchy. Children lists are derived
    /// from parent links; cluster links are made symmetric.
    pub fn build(spec: &TopologySpec) -> Result<Self, TopologyError> {
        spec.links.validate()?;
        let cloud = ServerId::new(spec.max_fog_level + 1, 1);
        let mut nodes = BTreeMap::new();
        for n in &spec.nodes {
            if n.id.index == 0 {
                return Err(TopologyError::ZeroIndex(n.id));
            }
            if n.id.level > cloud.level {
                return Err(TopologyError::AboveCloud(n.id));
            }
            if !(n.cpu_mips.is_finite() && n.cpu_mips > 0.0) {
                return Err(TopologyError::InvalidServer {
                    id: n.id,
                    reason: format!("cpu_mips must be positive, got {}", n.cpu_mips),
                });
            }
            if n.coverage_radius < 0.0 || !n.coverage_radius.is_finite() {
                return Err(TopologyError::InvalidServer {
                    id: n.id,
                    reason: "coverage_radius must be >= 0".into(),
                });
            }
            let node = ServerNode {
                id: n.id,
                cpu_mips: n.cpu_mips,
                container_capacity: n.capacity,
                active_containers: 0,
                ram_capacity_mb: n.ram_mb.unwrap_or(f64::INFINITY),
                ram_used_mb: 0.0,
                position: n.position,
                coverage_radius: n.coverage_radius,
                parent: n.parent,
                children: BTreeSet::new(),
                cluster_members: BTreeSet::new(),
                alive: true,
            };
            if nodes.insert(n.id, node).is_some() {
                return Err(TopologyError::DuplicateId(n.id));
            }
        }
        if !nodes.contains_key(&cloud) {
            return Err(TopologyError::MissingCloud(cloud));
        }
        let mut topo = Self {
            nodes,
            links: spec.links.clone(),
            max_fog_level: spec.max_fog_level,
            revision: 0,
            omega: Mutex::new(OmegaCache::default()),
        };
        for n in &spec.nodes {
            match n.parent {
                Some(_) if n.id == cloud => return Err(TopologyError::CloudWithParent(cloud)),
                Some(p) => topo.link_parent(n.id, p)?,
                None if n.id != cloud && !n.id.is_device() => {
                    return Err(TopologyError::MissingParent(n.id))
                }
                None => {}
            }
        }
        for n in &spec.nodes {
            for m in &n.cluster_members {
                topo.add_cluster_link(n.id, *m)?;
            }
        }
        Ok(topo)
    }

    fn link_parent(&mut self, child: ServerId, parent: ServerId) -> Result<(), TopologyError> {
        if !self.nodes.contains_key(&parent) {
            return Err(TopologyError::UnknownServer(parent));
        }
        if parent.level != child.level + 1 {
            return Err(TopologyError::ParentLevel { child, parent });
        }
        self.node_mut(child)?.parent = Some(parent);
        self.node_mut(parent)?.children.insert(child);
        Ok(())
    }

    pub fn max_fog_level(&self) -> u8 {
        self.max_fog_level
    }

    pub fn cloud(&self) -> ServerId {
        ServerId::new(self.max_fog_level + 1, 1)
    }

    pub fn links(&self) -> &LinkParams {
        &self.links
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: ServerId) -> Result<&ServerNode, TopologyError> {
        self.nodes.get(&id).ok_or(TopologyError::UnknownServer(id))
    }

    pub fn get(&self, id: ServerId) -> Option<&ServerNode> {
        self.nodes.get(&id)
    }

    pub fn contains(&self, id: ServerId) -> bool {
        self.nodes.contains_key(&id)
    }

    /// Mutable access for counters; structural fields must go through the
    /// dedicated mutators so the revision is bumped.
    pub fn node_mut(&mut self, id: ServerId) -> Result<&mut ServerNode, TopologyError> {
        self.nodes.get_mut(&id).ok_or(TopologyError::UnknownServer(id))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ServerNode> {
        self.nodes.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = ServerId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn level(&self, level: u8) -> impl Iterator<Item = &ServerNode> {
        self.nodes
            .range(ServerId::new(level, 0)..ServerId::new(level, u32::MAX))
            .map(|(_, n)| n)
    }

    /// Every non-device server, the cloud included.
    pub fn servers(&self) -> impl Iterator<Item = &ServerNode> {
        self.nodes.values().filter(|n| !n.id.is_device())
    }

    pub fn parent(&self, id: ServerId) -> Option<ServerId> {
        self.nodes.get(&id).and_then(|n| n.parent)
    }

    pub fn is_alive(&self, id: ServerId) -> bool {
        self.nodes.get(&id).map(|n| n.alive).unwrap_or(false)
    }

    /// True iff `dest ∈ Ω(from)`.
    pub fn reaches(&self, from: ServerId, dest: ServerId) -> bool {
        let mut cur = Some(dest);
        while let Some(c) = cur {
            if c == from {
                return true;
            }
            if c.level >= from.level {
                return false;
            }
            cur = self.nodes.get(&c).and_then(|n| n.parent);
        }
        false
    }

    /// `Υ(Ω(from), to)`.
    pub fn has_hierarchical_path(&self, from: ServerId, to: ServerId) -> Result<bool, TopologyError> {
        self.node(from)?;
        self.node(to)?;
        Ok(self.reaches(from, to))
    }

    /// `Ω(id)`, memoised per topology revision.
    pub fn omega(&self, id: ServerId) -> Result<Arc<BTreeSet<ServerId>>, TopologyError> {
        self.node(id)?;
        let mut cache = self.omega.lock().unwrap_or_else(|e| e.into_inner());
        if cache.revision != self.revision {
            cache.sets.clear();
            cache.revision = self.revision;
        }
        if let Some(s) = cache.sets.get(&id) {
            return Ok(s.clone());
        }
        let mut set = BTreeSet::new();
        let mut stack = vec![id];
        while let Some(x) = stack.pop() {
            if set.insert(x) {
                if let Some(n) = self.nodes.get(&x) {
                    stack.extend(n.children.iter().copied());
                }
            }
        }
        let set = Arc::new(set);
        cache.sets.insert(id, set.clone());
        Ok(set)
    }

    fn bump(&mut self) {
        self.revision += 1;
    }

    /// Re-parents `child`, keeping children lists consistent. `None` orphans it.
    pub fn set_parent(&mut self, child: ServerId, parent: Option<ServerId>) -> Result<(), TopologyError> {
        if let Some(p) = parent {
            let pn = self.node(p)?;
            if pn.id.level != child.level + 1 {
                return Err(TopologyError::ParentLevel { child, parent: p });
            }
        }
        let old = self.node(child)?.parent;
        if old == parent {
            return Ok(());
        }
        if let Some(o) = old {
            if let Some(on) = self.nodes.get_mut(&o) {
                on.children.remove(&child);
            }
        }
        self.node_mut(child)?.parent = parent;
        if let Some(p) = parent {
            self.node_mut(p)?.children.insert(child);
        }
        self.bump();
        Ok(())
    }

    /// Sets only the child's parent field. The parent learns about the child
    /// separately, through [`Topology::add_child`].
    pub fn set_parent_field(&mut self, child: ServerId, parent: Option<ServerId>) -> Result<(), TopologyError> {
        if let Some(p) = parent {
            if self.node(p)?.id.level != child.level + 1 {
                return Err(TopologyError::ParentLevel { child, parent: p });
            }
        }
        let n = self.node_mut(child)?;
        if n.parent != parent {
            n.parent = parent;
            self.bump();
        }
        Ok(())
    }

    pub fn add_child(&mut self, owner: ServerId, child: ServerId) -> Result<(), TopologyError> {
        if child.level + 1 != owner.level {
            return Err(TopologyError::ParentLevel { child, parent: owner });
        }
        self.node(child)?;
        if self.node_mut(owner)?.children.insert(child) {
            self.bump();
        }
        Ok(())
    }

    pub fn add_cluster_link(&mut self, a: ServerId, b: ServerId) -> Result<(), TopologyError> {
        if a == b {
            return Err(TopologyError::SelfCluster(a));
        }
        if a.level != b.level {
            return Err(TopologyError::ClusterLevel { a, b });
        }
        self.node(b)?;
        let inserted = self.node_mut(a)?.cluster_members.insert(b);
        let inserted_b = self.node_mut(b)?.cluster_members.insert(a);
        if inserted || inserted_b {
            self.bump();
        }
        Ok(())
    }

    /// One-directional insert, used while a join handshake is half done.
    pub fn add_cluster_member(&mut self, owner: ServerId, member: ServerId) -> Result<(), TopologyError> {
        if owner == member {
            return Err(TopologyError::SelfCluster(owner));
        }
        if owner.level != member.level {
            return Err(TopologyError::ClusterLevel { a: owner, b: member });
        }
        self.node(member)?;
        if self.node_mut(owner)?.cluster_members.insert(member) {
            self.bump();
        }
        Ok(())
    }

    pub fn remove_cluster_member(&mut self, owner: ServerId, member: ServerId) -> Result<(), TopologyError> {
        if self.node_mut(owner)?.cluster_members.remove(&member) {
            self.bump();
        }
        Ok(())
    }

    pub fn remove_child(&mut self, owner: ServerId, child: ServerId) -> Result<(), TopologyError> {
        if self.node_mut(owner)?.children.remove(&child) {
            self.bump();
        }
        Ok(())
    }

    pub fn set_alive(&mut self, id: ServerId, alive: bool) -> Result<(), TopologyError> {
        let n = self.node_mut(id)?;
        if n.alive != alive {
            n.alive = alive;
            self.bump();
        }
        Ok(())
    }

    /// Adds a node without links; the clustering protocol wires it up later.
    pub fn insert_node(&mut self, node: ServerNode) -> Result<(), TopologyError> {
        if self.nodes.contains_key(&node.id) {
            return Err(TopologyError::DuplicateId(node.id));
        }
        let id = node.id;
        let parent = node.parent;
        let members: Vec<_> = node.cluster_members.iter().copied().collect();
        let mut node = node;
        node.parent = None;
        node.children.clear();
        node.cluster_members.clear();
        self.nodes.insert(id, node);
        if let Some(p) = parent {
            self.set_parent(id, Some(p))?;
        }
        for m in members {
            self.add_cluster_link(id, m)?;
        }
        self.bump();
        Ok(())
    }

    /// Deletes a node and every reference to it. Its children become orphans.
    pub fn remove_node(&mut self, id: ServerId) -> Result<ServerNode, TopologyError> {
        let node = self.nodes.remove(&id).ok_or(TopologyError::UnknownServer(id))?;
        if let Some(p) = node.parent {
            if let Some(pn) = self.nodes.get_mut(&p) {
                pn.children.remove(&id);
            }
        }
        for c in &node.children {
            if let Some(cn) = self.nodes.get_mut(c) {
                cn.parent = None;
            }
        }
        for m in &node.cluster_members {
            if let Some(mn) = self.nodes.get_mut(m) {
                mn.cluster_members.remove(&id);
            }
        }
        self.bump();
        Ok(node)
    }

    /// Whether two same-level servers are close enough to cluster: their
    /// coverage circles overlap.
    pub fn in_mutual_range(&self, a: ServerId, b: ServerId) -> bool {
        match (self.nodes.get(&a), self.nodes.get(&b)) {
            (Some(x), Some(y)) => {
                x.coverage_radius > 0.0
                    && y.coverage_radius > 0.0
                    && x.position.distance(&y.position) <= x.coverage_radius + y.coverage_radius
            }
            _ => false,
        }
    }

    /// Alive level-1 servers whose coverage circle contains `p`.
    pub fn sensed_fogs(&self, p: &Point) -> Vec<ServerId> {
        self.level(1).filter(|n| n.alive && n.covers(p)).map(|n| n.id).collect()
    }
}
