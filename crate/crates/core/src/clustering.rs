// SPDX-License-Identifier: Apache-2.0

//! Same-level clustering and parent selection.
//!
//! Each fog server runs [`handle_cluster_message`] on the control messages it
//! receives. The handler only touches the receiving node's own state and
//! returns the messages to send plus the changes to apply to that node's
//! entries in the shared [`Topology`]; the simulation kernel delivers the
//! messages with link latency and applies the deltas.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{Point, ServerId, Topology, TopologyError};

/// Speed used to turn distance into a latency tie-breaker, metres/second.
pub const PROPAGATION_SPEED: f64 = 2.0e8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("node {0} is not alive")]
    Dead(ServerId),
    #[error("message from unknown or dead node {0}")]
    UnknownSender(ServerId),
    #[error("node {node} cannot leave while it still runs {tasks} containers")]
    Busy { node: ServerId, tasks: u32 },
    #[error("payload does not match message kind {0:?}")]
    BadPayload(ControlKind),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ControlKind {
    CandidParent,
    FogJoining,
    ReplyNewFog,
    StartFogLeaving,
    FogLeaving,
    StartFogFailureRecovery,
    FogFailureRecovery,
}

/// What a node advertises about its containers.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContainerSummary {
    /// Running containers per module type.
    pub active: BTreeMap<String, u32>,
    /// Module types with a stopped container image on the node.
    pub inactive: BTreeSet<String>,
    pub free_slots: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ControlPayload {
    Empty,
    Candidate { position: Point, range: f64 },
    Join { position: Point, range: f64, parent: Option<ServerId> },
    Reply { position: Point, range: f64, containers: ContainerSummary },
    Failed(ServerId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlMessage {
    pub kind: ControlKind,
    pub source: ServerId,
    pub payload: ControlPayload,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeerInfo {
    pub position: Point,
    pub range: f64,
    pub containers: ContainerSummary,
}

/// Protocol state held by one fog server.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterState {
    pub id: ServerId,
    pub position: Point,
    pub range: f64,
    /// Positions and container maps of neighbours (members, parent, children).
    pub peers: BTreeMap<ServerId, PeerInfo>,
    /// Candidate parents with their estimated latency.
    pub candidates: BTreeMap<ServerId, f64>,
    pub containers: ContainerSummary,
    /// Set once the node has announced itself with `FogJoining`.
    pub joined: bool,
}

impl ClusterState {
    pub fn new(topo: &Topology, id: ServerId) -> Result<Self, ClusterError> {
        let n = topo.node(id)?;
        Ok(Self {
            id,
            position: n.position,
            range: n.coverage_radius,
            peers: BTreeMap::new(),
            candidates: BTreeMap::new(),
            containers: ContainerSummary { free_slots: n.free_slots(), ..Default::default() },
            joined: false,
        })
    }

    /// Last advertised free slots of `peer`, if known.
    pub fn known_free_slots(&self, peer: ServerId) -> Option<u32> {
        self.peers.get(&peer).map(|p| p.containers.free_slots)
    }

    /// `ReplyNewFog` carrying this node's position and container status.
    pub fn reply(&self) -> ControlMessage {
        ControlMessage {
            kind: ControlKind::ReplyNewFog,
            source: self.id,
            payload: ControlPayload::Reply {
                position: self.position,
                range: self.range,
                containers: self.containers.clone(),
            },
        }
    }

    fn joining(&self, parent: Option<ServerId>) -> ControlMessage {
        ControlMessage {
            kind: ControlKind::FogJoining,
            source: self.id,
            payload: ControlPayload::Join { position: self.position, range: self.range, parent },
        }
    }
}

/// Change to the receiving node's entries in the topology.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Delta {
    AddMember(ServerId),
    RemoveMember(ServerId),
    SetParent(Option<ServerId>),
    AddChild(ServerId),
    RemoveChild(ServerId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outgoing {
    pub to: ServerId,
    pub msg: ControlMessage,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Reaction {
    pub send: Vec<Outgoing>,
    pub deltas: Vec<Delta>,
}

/// Applies `deltas` of node `id` to the topology.
pub fn apply_deltas(topo: &mut Topology, id: ServerId, deltas: &[Delta]) -> Result<(), TopologyError> {
    for d in deltas {
        match *d {
            Delta::AddMember(m) => topo.add_cluster_member(id, m)?,
            Delta::RemoveMember(m) => topo.remove_cluster_member(id, m)?,
            Delta::SetParent(p) => topo.set_parent_field(id, p)?,
            Delta::AddChild(c) => topo.add_child(id, c)?,
            Delta::RemoveChild(c) => topo.remove_child(id, c)?,
        }
    }
    Ok(())
}

fn circles_overlap(a: Point, ra: f64, b: Point, rb: f64) -> bool {
    ra > 0.0 && rb > 0.0 && a.distance(&b) <= ra + rb
}

/// Nodes a broadcast from `id` reaches: alive same-level peers in range, plus
/// the parent and children.
pub fn broadcast_scope(topo: &Topology, id: ServerId) -> Vec<ServerId> {
    let Some(me) = topo.get(id) else { return Vec::new() };
    let mut out = BTreeSet::new();
    for n in topo.level(id.level) {
        if n.id != id && n.alive && circles_overlap(me.position, me.coverage_radius, n.position, n.coverage_radius) {
            out.insert(n.id);
        }
    }
    if let Some(p) = me.parent {
        out.insert(p);
    }
    out.extend(me.children.iter().filter(|c| !c.is_device()));
    out.retain(|x| topo.is_alive(*x));
    out.into_iter().collect()
}

/// Estimated latency from `child` to a candidate parent: the configured uplink
/// latency plus propagation over the straight-line distance.
pub fn estimate_parent_latency(topo: &Topology, child: ServerId, candidate: ServerId) -> Result<f64, ClusterError> {
    let c = topo.node(child)?;
    let p = topo.node(candidate)?;
    Ok(topo.links().up_latency(child.level) + c.position.distance(&p.position) / PROPAGATION_SPEED)
}

/// Candidate with the smallest estimated latency; ties go to the smaller id.
pub fn select_parent(candidates: &BTreeMap<ServerId, f64>) -> Option<ServerId> {
    let mut best: Option<(ServerId, f64)> = None;
    for (&id, &lat) in candidates {
        if best.map_or(true, |(_, b)| lat < b) {
            best = Some((id, lat));
        }
    }
    best.map(|(id, _)| id)
}

fn parent_change(state: &mut ClusterState, topo: &Topology, reaction: &mut Reaction) {
    let current = topo.parent(state.id);
    let chosen = select_parent(&state.candidates);
    if state.joined && chosen == current && chosen.is_some() {
        return;
    }
    state.joined = true;
    if chosen != current {
        reaction.deltas.push(Delta::SetParent(chosen));
    }
    let msg = state.joining(chosen);
    let mut targets: BTreeSet<ServerId> = broadcast_scope(topo, state.id).into_iter().collect();
    if let Some(p) = chosen {
        targets.insert(p);
    }
    if let Some(old) = current {
        if topo.is_alive(old) {
            targets.insert(old);
        }
    }
    for to in targets {
        reaction.send.push(Outgoing { to, msg: msg.clone() });
    }
}

/// Reacts to one control message at `state.id`.
pub fn handle_cluster_message(
    state: &mut ClusterState,
    msg: &ControlMessage,
    topo: &Topology,
) -> Result<Reaction, ClusterError> {
    let me = state.id;
    if !topo.is_alive(me) {
        return Err(ClusterError::Dead(me));
    }
    let local = matches!(msg.kind, ControlKind::StartFogLeaving | ControlKind::StartFogFailureRecovery);
    if !local && !topo.is_alive(msg.source) {
        log::warn!("{me} drops {:?} from unknown or dead {}", msg.kind, msg.source);
        return Err(ClusterError::UnknownSender(msg.source));
    }
    let mut out = Reaction::default();
    let my_parent = topo.parent(me);
    match (msg.kind, &msg.payload) {
        (ControlKind::CandidParent, ControlPayload::Candidate { position, range }) => {
            if msg.source.level != me.level + 1 {
                return Err(ClusterError::BadPayload(msg.kind));
            }
            state.peers.entry(msg.source).or_insert_with(|| PeerInfo {
                position: *position,
                range: *range,
                containers: ContainerSummary::default(),
            });
            let lat = estimate_parent_latency(topo, me, msg.source)?;
            state.candidates.insert(msg.source, lat);
            parent_change(state, topo, &mut out);
        }
        (ControlKind::FogJoining, ControlPayload::Join { position, range, parent }) => {
            let src = msg.source;
            if src.level == me.level {
                if circles_overlap(state.position, state.range, *position, *range) {
                    out.deltas.push(Delta::AddMember(src));
                    state.peers.insert(
                        src,
                        PeerInfo { position: *position, range: *range, containers: ContainerSummary::default() },
                    );
                    out.send.push(Outgoing { to: src, msg: state.reply() });
                }
            } else if src.level + 1 == me.level {
                if *parent == Some(me) {
                    out.deltas.push(Delta::AddChild(src));
                    state.peers.insert(
                        src,
                        PeerInfo { position: *position, range: *range, containers: ContainerSummary::default() },
                    );
                    out.send.push(Outgoing { to: src, msg: state.reply() });
                } else if topo.node(me)?.children.contains(&src) {
                    out.deltas.push(Delta::RemoveChild(src));
                    state.peers.remove(&src);
                }
            }
        }
        (ControlKind::ReplyNewFog, ControlPayload::Reply { position, range, containers }) => {
            let src = msg.source;
            if src.level == me.level && circles_overlap(state.position, state.range, *position, *range) {
                out.deltas.push(Delta::AddMember(src));
            }
            state.peers.insert(src, PeerInfo { position: *position, range: *range, containers: containers.clone() });
        }
        (ControlKind::StartFogLeaving, _) => {
            let busy = topo.node(me)?.active_containers;
            if busy > 0 {
                return Err(ClusterError::Busy { node: me, tasks: busy });
            }
            let leave = ControlMessage { kind: ControlKind::FogLeaving, source: me, payload: ControlPayload::Empty };
            for to in broadcast_scope(topo, me) {
                out.send.push(Outgoing { to, msg: leave.clone() });
            }
        }
        (ControlKind::FogLeaving, _) => {
            purge(state, topo, msg.source, &mut out)?;
            if my_parent == Some(msg.source) {
                state.candidates.remove(&msg.source);
                parent_change(state, topo, &mut out);
            }
        }
        (ControlKind::StartFogFailureRecovery, ControlPayload::Failed(failed)) => {
            purge(state, topo, *failed, &mut out)?;
            let note = ControlMessage {
                kind: ControlKind::FogFailureRecovery,
                source: me,
                payload: ControlPayload::Failed(*failed),
            };
            for c in topo.node(me)?.children.iter().filter(|c| !c.is_device() && **c != *failed) {
                if topo.is_alive(*c) {
                    out.send.push(Outgoing { to: *c, msg: note.clone() });
                }
            }
        }
        (ControlKind::FogFailureRecovery, ControlPayload::Failed(failed)) => {
            purge(state, topo, *failed, &mut out)?;
            if my_parent == Some(*failed) {
                state.candidates.remove(failed);
                parent_change(state, topo, &mut out);
            }
        }
        (kind, _) => return Err(ClusterError::BadPayload(kind)),
    }
    Ok(out)
}

fn purge(state: &mut ClusterState, topo: &Topology, gone: ServerId, out: &mut Reaction) -> Result<(), ClusterError> {
    let node = topo.node(state.id)?;
    if node.cluster_members.contains(&gone) {
        out.deltas.push(Delta::RemoveMember(gone));
    }
    if node.children.contains(&gone) {
        out.deltas.push(Delta::RemoveChild(gone));
    }
    state.peers.remove(&gone);
    if node.parent != Some(gone) {
        state.candidates.remove(&gone);
    }
    Ok(())
}

/// Builds the initial `CandidParent` advertisements: every server above
/// level 1 advertises to the nodes one level below that it covers, or to all
/// of them when coverage is not modelled.
pub fn candidate_adverts(topo: &Topology) -> Vec<Outgoing> {
    let mut out = Vec::new();
    for n in topo.servers().filter(|n| n.alive && n.id.level >= 2) {
        let msg = ControlMessage {
            kind: ControlKind::CandidParent,
            source: n.id,
            payload: ControlPayload::Candidate { position: n.position, range: n.coverage_radius },
        };
        for c in topo.level(n.id.level - 1).filter(|c| c.alive) {
            let covered = n.coverage_radius <= 0.0 || n.position.distance(&c.position) <= n.coverage_radius;
            if covered || c.parent == Some(n.id) {
                out.push(Outgoing { to: c.id, msg: msg.clone() });
            }
        }
    }
    out
}
