// SPDX-License-Identifier: Apache-2.0

//! The simulated world and its event handlers.
//!
//! Every fog server runs the same message handlers; which placement and
//! migration decisions it makes depends on the policy under test. Decisions
//! are served one at a time per node. Container slots are only ever checked
//! against the true counters at the server that hosts them, so a deciding
//! node working from stale status can be refused.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use thiserror::Error;

use crate::app::{AppDag, AppError, ModuleId};
use crate::baselines::{self, PolicyKind};
use crate::clustering::{self, ClusterState, ControlKind, ControlMessage, ControlPayload, Delta};
use crate::cost::{self, CostError, MigrationCost, MigrationParams, Placement};
use crate::migration::{self, Admission, MobilityState, MoveSpec, RecoveryOutcome};
use crate::oracle::{self, OracleError, OracleProblem, DEFAULT_NODE_BUDGET};
use crate::placement::{self, CapacityView, DecisionContext, PlacementDecision};
use crate::scenario::{self, AdmissionReference, Scenario, ScenarioError};
use crate::sim::kernel::EventQueue;
use crate::sim::metrics::{optimality_gap, Metrics};
use crate::sim::mobility::{self, Walker};
use crate::sim::tasks::{TaskCost, TaskLedger, TaskTotals, Window};
use crate::topology::{Point, ServerId, ServerNode, Topology, TopologyError};

const TAG_LAYOUT: u64 = 1;
const TAG_DEVICE: u64 = 2;
const TAG_MOBILITY: u64 = 3;
const TAG_MIGRATION: u64 = 4;
const TAG_FAILURE: u64 = 5;
const TAG_PICK: u64 = 6;

/// Recovery attempts per schedule before silent modules are given up on.
const MAX_ROUND_RETRIES: u32 = 3;

const BITS_PER_MB: f64 = 8.0e6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    App(#[from] AppError),
    #[error("setup: {0}")]
    Setup(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    /// Solve every completed device placement exactly and report the gap.
    pub optimality: bool,
    pub oracle_budget: u64,
    /// Keep a JSON-lines event log.
    pub event_log: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { optimality: false, oracle_budget: DEFAULT_NODE_BUDGET, event_log: false }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub metrics: Metrics,
    pub events: Vec<String>,
}

/// Independent random stream `idx` of purpose `tag`.
fn stream(seed: u64, tag: u64, idx: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream((tag << 32) | idx);
    r
}

fn uniform<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo < hi {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

#[derive(Clone, Copy, Debug)]
struct Transfer {
    dev: usize,
    round: u64,
    module: ModuleId,
    from: ServerId,
    to: ServerId,
    attempt: u32,
    spec: MoveSpec,
}

#[derive(Clone, Debug)]
enum Msg {
    Cluster(ControlMessage),
    PlaceReq { dev: usize, modules: Vec<ModuleId>, snapshot: Placement, origin: ServerId, recovery: bool },
    Deploy { dev: usize, modules: Vec<ModuleId>, decider: ServerId },
    /// `more` is set when a second ack for the same deploy follows.
    DeployAck { dev: usize, server: ServerId, placed: Vec<ModuleId>, failed: Vec<ModuleId>, more: bool },
    Placed { dev: usize, confirmed: Vec<(ModuleId, ServerId)>, rejected: Vec<ModuleId> },
    Start { dev: usize },
    NewController { dev: usize },
    RoundOpen { dev: usize, round: u64 },
    MigrationReq { dev: usize, round: u64, modules: Vec<ModuleId>, excluded: BTreeSet<ServerId> },
    MigrationDest(Transfer),
    StartMigration(Transfer),
    Notify { dev: usize, round: u64, module: ModuleId, cost: Option<MigrationCost> },
    MigrationFailed { dev: usize, round: u64, module: ModuleId, server: ServerId },
    Recover { dev: usize, round: u64, module: ModuleId },
}

#[derive(Debug)]
enum Ev {
    Deliver { to: ServerId, msg: Msg },
    Process { at: ServerId, msg: Msg },
    Send { from: ServerId, to: ServerId, msg: Msg },
    Request(usize),
    Tick,
    StatusAll,
    MigrationEnd { t: Transfer, cost: MigrationCost },
    RoundTimeout { dev: usize, round: u64, schedule: usize },
    Crash(ServerId),
    CrashDetected { node: ServerId, neighbours: Vec<ServerId> },
    /// The status showing a deployment reaches its decider.
    Settle { decider: ServerId, target: ServerId, slots: u32 },
}

struct Round {
    id: u64,
    new_controller: ServerId,
    coordinator: ServerId,
    schedules: Vec<Vec<ModuleId>>,
    pos: usize,
    waiting: BTreeSet<ModuleId>,
    costs: Vec<MigrationCost>,
    specs: BTreeMap<ModuleId, MoveSpec>,
    failed: BTreeMap<ModuleId, BTreeSet<ServerId>>,
    retries: u32,
    admission: Admission,
}

struct Device {
    id: ServerId,
    dag: AppDag,
    walker: Walker,
    rng_mob: ChaCha8Rng,
    rng_mig: ChaCha8Rng,
    rng_fail: ChaCha8Rng,
    rng_pick: ChaCha8Rng,
    request_at: f64,
    controller: Option<ServerId>,
    placement: Placement,
    pending: BTreeSet<ModuleId>,
    rejected: BTreeSet<ModuleId>,
    initial_done: bool,
    migrating: Vec<bool>,
    attempt: Vec<u32>,
    ledger: TaskLedger,
    round: Option<Round>,
    queued: Option<(ServerId, Admission)>,
}

/// Deployments issued by one deciding node for one device.
struct Batch {
    origin: ServerId,
    outstanding: u32,
    recovering: u32,
    confirmed: Vec<(ModuleId, ServerId)>,
    rejected: Vec<ModuleId>,
    failed_servers: BTreeSet<ServerId>,
}

impl Batch {
    fn new(origin: ServerId) -> Self {
        Self {
            origin,
            outstanding: 0,
            recovering: 0,
            confirmed: Vec::new(),
            rejected: Vec::new(),
            failed_servers: BTreeSet::new(),
        }
    }
}

struct World<'s> {
    sc: &'s Scenario,
    opts: &'s RunOptions,
    policy: PolicyKind,
    params: MigrationParams,
    horizon: f64,
    now: f64,
    queue: EventQueue<Ev>,
    topo: Topology,
    clusters: BTreeMap<ServerId, ClusterState>,
    busy_until: BTreeMap<ServerId, f64>,
    /// Slots promised by the central controller but not yet taken.
    reserved: BTreeMap<ServerId, u32>,
    /// Slots a decider has deployed to that its status view does not show yet.
    inflight: BTreeMap<(ServerId, ServerId), u32>,
    central: ServerId,
    devices: Vec<Device>,
    batches: BTreeMap<(usize, ServerId), Batch>,
    next_round: u64,
    metrics: Metrics,
    pdts: Vec<f64>,
    events: Vec<String>,
}

/// Runs one scenario to its horizon.
pub fn run(sc: &Scenario, opts: &RunOptions) -> Result<RunOutput, SimError> {
    sc.validate()?;
    let mut w = World::new(sc, opts)?;
    w.bootstrap();
    w.run_loop()?;
    Ok(w.finish())
}

fn nearest_controller(topo: &Topology, pos: Point) -> Option<ServerId> {
    let closest = |it: &mut dyn Iterator<Item = &ServerNode>| {
        let mut best: Option<(f64, ServerId)> = None;
        for n in it {
            let d = n.position.distance(&pos);
            if best.map_or(true, |(bd, bs)| d < bd || (d == bd && n.id < bs)) {
                best = Some((d, n.id));
            }
        }
        best.map(|(_, s)| s)
    };
    closest(&mut topo.level(1).filter(|n| n.alive && n.covers(&pos)))
        .or_else(|| closest(&mut topo.level(1).filter(|n| n.alive)))
}

impl<'s> World<'s> {
    fn new(sc: &'s Scenario, opts: &'s RunOptions) -> Result<Self, SimError> {
        let seed = sc.run.seed;
        let spec = sc.topology_spec(&mut stream(seed, TAG_LAYOUT, 0))?;
        let unknown = scenario::unknown_crash_targets(sc, &spec);
        if !unknown.is_empty() {
            return Err(SimError::Setup(format!("crash targets not in the topology: {unknown:?}")));
        }
        let mut topo = Topology::build(&spec)?;
        let template = sc.app_template()?;
        let mut devices = Vec::with_capacity(sc.devices.count as usize);
        for d in 0..sc.devices.count {
            let mut rng = stream(seed, TAG_DEVICE, d as u64);
            let pos = Point::new(rng.gen_range(0.0..=sc.area_m[0]), rng.gen_range(0.0..=sc.area_m[1]));
            let dag = template.instantiate(&mut rng)?;
            let request_at = sc.run.warmup_s + sc.run.request_jitter_s * rng.gen::<f64>();
            let id = ServerId::device(d + 1);
            let parent = nearest_controller(&topo, pos)
                .ok_or_else(|| SimError::Setup("no live level-1 server for devices to attach to".into()))?;
            topo.insert_node(ServerNode {
                id,
                cpu_mips: sc.devices.cpu_mips,
                container_capacity: 0,
                active_containers: 0,
                ram_capacity_mb: 0.0,
                ram_used_mb: 0.0,
                position: pos,
                coverage_radius: 0.0,
                parent: Some(parent),
                children: BTreeSet::new(),
                cluster_members: BTreeSet::new(),
                alive: true,
            })?;
            let mut rng_mob = stream(seed, TAG_MOBILITY, d as u64);
            let walker = mobility::new_leg(pos, sc.area_m, sc.mobility.speed_mps, &mut rng_mob);
            let n = dag.len();
            devices.push(Device {
                id,
                placement: Placement::new(&dag, id),
                ledger: TaskLedger::new(dag.sensor_interval),
                dag,
                walker,
                rng_mob,
                rng_mig: stream(seed, TAG_MIGRATION, d as u64),
                rng_fail: stream(seed, TAG_FAILURE, d as u64),
                rng_pick: stream(seed, TAG_PICK, d as u64),
                request_at,
                controller: None,
                pending: BTreeSet::new(),
                rejected: BTreeSet::new(),
                initial_done: false,
                migrating: vec![false; n],
                attempt: vec![0; n],
                round: None,
                queued: None,
            });
        }
        let mut clusters = BTreeMap::new();
        for n in topo.servers() {
            clusters.insert(n.id, ClusterState::new(&topo, n.id).map_err(|e| SimError::Setup(e.to_string()))?);
        }
        let central = baselines::central_controller(&topo);
        let mut metrics = Metrics::new(sc.run.policy, &sc.devices.app, sc.run.horizon_s, seed);
        metrics.devices = sc.devices.count;
        metrics.counters.devices = sc.devices.count;
        metrics.fr_mode = sc.run.policy == PolicyKind::Proposed && sc.failure.recovery;
        Ok(Self {
            sc,
            opts,
            policy: sc.run.policy,
            params: sc.migration.params(),
            horizon: sc.run.horizon_s,
            now: 0.0,
            queue: EventQueue::default(),
            topo,
            clusters,
            busy_until: BTreeMap::new(),
            reserved: BTreeMap::new(),
            inflight: BTreeMap::new(),
            central,
            devices,
            batches: BTreeMap::new(),
            next_round: 1,
            metrics,
            pdts: Vec::new(),
            events: Vec::new(),
        })
    }

    fn bootstrap(&mut self) {
        for o in clustering::candidate_adverts(&self.topo) {
            self.send(o.msg.source, o.to, Msg::Cluster(o.msg));
        }
        self.queue.push(self.sc.protocol.status_broadcast_s, Ev::StatusAll);
        for d in 0..self.devices.len() {
            self.queue.push(self.devices[d].request_at, Ev::Request(d));
        }
        if self.sc.mobility.enabled {
            self.queue.push(self.sc.mobility.tick_s, Ev::Tick);
        }
        for c in &self.sc.failure.crashes {
            self.queue.push(c.at_s, Ev::Crash(c.node));
        }
    }

    fn run_loop(&mut self) -> Result<(), SimError> {
        while let Some(t) = self.queue.peek_time() {
            if t >= self.horizon {
                break;
            }
            let Some((t, ev)) = self.queue.pop() else { break };
            self.now = t;
            self.metrics.counters.events += 1;
            let what = format!("{ev:?}");
            if let Err(e) = self.dispatch(ev) {
                log::error!("t={t}: {e} while handling {what}");
                return Err(e);
            }
        }
        Ok(())
    }

    fn finish(mut self) -> RunOutput {
        let mut totals = TaskTotals::default();
        for dev in &self.devices {
            totals.add(&dev.ledger.finish(self.horizon, self.sc.devices.interrupted, self.sc.energy.p_idle));
        }
        let w = self.sc.weights;
        let m = &mut self.metrics;
        m.tasks = totals;
        m.counters.tasks_emitted = totals.emitted;
        m.counters.tasks_completed = totals.completed;
        m.counters.tasks_in_flight = totals.in_flight;
        m.counters.tasks_dropped = totals.dropped;
        if totals.completed > 0 {
            m.artt_s = totals.sum_time / totals.completed as f64;
            m.aect_j = totals.sum_energy / totals.completed as f64;
        }
        m.awct = w.combine(m.artt_s, m.aect_j);
        m.cmwc = w.combine(m.cmt_s, m.cmec_j);
        m.tit = totals.interrupted;
        if !self.pdts.is_empty() {
            m.pdt_s = self.pdts.iter().sum::<f64>() / self.pdts.len() as f64;
        }
        m.oracle_gap = optimality_gap(&m.oracle_pairs);
        let topo = &self.topo;
        m.fully_placed_at_horizon = self.devices.iter().all(|d| {
            d.initial_done
                && d.pending.is_empty()
                && d.rejected.is_empty()
                && d.dag.placeable().all(|x| d.placement.get(x).is_some_and(|s| topo.is_alive(s)))
        });
        RunOutput { metrics: self.metrics, events: self.events }
    }

    // ---- plumbing ----

    fn logging(&self) -> bool {
        self.opts.event_log
    }

    fn log_event(&mut self, mut v: Value) {
        if let Value::Object(map) = &mut v {
            map.insert("t".into(), json!(self.now));
        }
        self.events.push(v.to_string());
    }

    fn send(&mut self, from: ServerId, to: ServerId, msg: Msg) {
        let delay = if from == to { Ok(0.0) } else { cost::internodal_latency(&self.topo, from, to) };
        match delay {
            Ok(l) => self.queue.push(self.now + l, Ev::Deliver { to, msg }),
            Err(e) => log::debug!("{from} -> {to} undeliverable: {e}"),
        }
    }

    /// Queues `msg` behind earlier decisions at `at`.
    fn serve(&mut self, at: ServerId, msg: Msg) {
        let b = self.busy_until.entry(at).or_insert(0.0);
        let start = b.max(self.now);
        *b = start + self.sc.protocol.decision_service_s;
        let t = *b;
        self.queue.push(t, Ev::Process { at, msg });
    }

    fn true_free(&self, s: ServerId) -> u32 {
        self.topo.get(s).filter(|n| n.alive).map_or(0, |n| n.free_slots())
    }

    fn central_view(&self) -> CapacityView {
        self.topo
            .servers()
            .filter(|n| n.alive)
            .map(|n| (n.id, n.free_slots().saturating_sub(self.reserved.get(&n.id).copied().unwrap_or(0))))
            .collect()
    }

    /// What node `n` believes about free slots: its own counter plus the last
    /// status heard from each neighbour, less what it has deployed since.
    fn view_of(&self, n: ServerId) -> CapacityView {
        if self.policy == PolicyKind::Urmila {
            return self.central_view();
        }
        let mut v = CapacityView::new();
        v.insert(n, self.true_free(n));
        if let Some(st) = self.clusters.get(&n) {
            for (p, info) in &st.peers {
                if !p.is_device() && self.topo.is_alive(*p) {
                    v.insert(*p, info.containers.free_slots);
                }
            }
        }
        for (&(_, t), &k) in self.inflight.range((n, ServerId::new(0, 0))..=(n, ServerId::new(u8::MAX, u32::MAX))) {
            if let Some(f) = v.get_mut(&t) {
                *f = f.saturating_sub(k);
            }
        }
        v
    }

    fn ctx(&self, d: usize) -> DecisionContext<'_> {
        DecisionContext {
            topo: &self.topo,
            dag: &self.devices[d].dag,
            weights: self.sc.weights,
            profile: &self.sc.energy,
        }
    }

    fn adjust_containers(&mut self, s: ServerId, names: &[String], add: bool) {
        let Ok(node) = self.topo.node_mut(s) else { return };
        let k = names.len() as u32;
        if add {
            node.active_containers += k;
        } else {
            node.active_containers = node.active_containers.saturating_sub(k);
        }
        let free = node.free_slots();
        if let Some(st) = self.clusters.get_mut(&s) {
            let c = &mut st.containers;
            c.free_slots = free;
            for n in names {
                if add {
                    *c.active.entry(n.clone()).or_default() += 1;
                    c.inactive.remove(n);
                } else if let Some(cnt) = c.active.get_mut(n) {
                    *cnt -= 1;
                    if *cnt == 0 {
                        c.active.remove(n);
                        c.inactive.insert(n.clone());
                    }
                }
            }
        }
        self.broadcast_status(s);
    }

    fn broadcast_status(&mut self, s: ServerId) {
        if !self.topo.is_alive(s) {
            return;
        }
        let Some(st) = self.clusters.get(&s) else { return };
        let msg = st.reply();
        for to in clustering::broadcast_scope(&self.topo, s) {
            self.send(s, to, Msg::Cluster(msg.clone()));
        }
    }

    fn module_names(&self, d: usize, modules: &[ModuleId]) -> Vec<String> {
        modules.iter().map(|&m| self.devices[d].dag.modules[m].name.clone()).collect()
    }

    fn task_cost(&self, d: usize) -> TaskCost {
        let dev = &self.devices[d];
        let n = dev.dag.schedules().len();
        let live = dev
            .dag
            .placeable()
            .all(|m| dev.placement.get(m).is_some_and(|s| self.topo.is_alive(s)));
        if !live {
            return TaskCost::unserved(n);
        }
        match cost::app_cost_unchecked(&self.topo, &dev.dag, &dev.placement, self.sc.weights, &self.sc.energy) {
            Ok(c) => TaskCost::from_app_cost(&c, self.sc.devices.sensor_latency_s),
            Err(e) => {
                log::debug!("device {}: placement not evaluable: {e}", dev.id);
                TaskCost::unserved(n)
            }
        }
    }

    fn refresh_cost(&mut self, d: usize) {
        if !self.devices[d].ledger.started() {
            return;
        }
        let c = self.task_cost(d);
        let now = self.now;
        self.devices[d].ledger.set_cost(now, c);
    }

    fn refresh_all_costs(&mut self) {
        for d in 0..self.devices.len() {
            self.refresh_cost(d);
        }
    }

    fn check_constraints(&mut self, d: usize) {
        let dev = &self.devices[d];
        if !dev.rejected.is_empty() || !dev.pending.is_empty() {
            return;
        }
        let v = cost::validate(&self.topo, &dev.dag, &dev.placement, None);
        for x in &v {
            log::warn!("device {}: {x}", dev.id);
        }
        self.metrics.counters.constraint_violations += v.len() as u64;
    }

    fn round_matches(&self, d: usize, round: u64) -> bool {
        self.devices[d].round.as_ref().is_some_and(|r| r.id == round)
    }

    fn coordinator(&self, d: usize) -> Option<ServerId> {
        self.devices[d].round.as_ref().map(|r| r.coordinator)
    }

    fn movable(&self, d: usize, m: ModuleId) -> bool {
        let dev = &self.devices[d];
        !dev.migrating[m] && dev.placement.get(m).is_some_and(|s| self.topo.is_alive(s))
    }

    // ---- dispatch ----

    fn dispatch(&mut self, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::Deliver { to, msg } => self.deliver(to, msg)?,
            Ev::Process { at, msg } => self.process(at, msg)?,
            Ev::Send { from, to, msg } => self.send(from, to, msg),
            Ev::Request(d) => self.on_request(d)?,
            Ev::Tick => self.on_tick()?,
            Ev::StatusAll => {
                let ids: Vec<ServerId> = self.topo.servers().filter(|n| n.alive).map(|n| n.id).collect();
                for s in ids {
                    self.broadcast_status(s);
                }
            }
            Ev::MigrationEnd { t, cost } => self.on_migration_end(t, cost),
            Ev::RoundTimeout { dev, round, schedule } => self.on_round_timeout(dev, round, schedule),
            Ev::Crash(n) => self.on_crash(n)?,
            Ev::CrashDetected { node, neighbours } => self.on_crash_detected(node, neighbours)?,
            Ev::Settle { decider, target, slots } => self.settle(decider, target, slots),
        }
        Ok(())
    }

    fn deliver(&mut self, to: ServerId, msg: Msg) -> Result<(), SimError> {
        if !to.is_device() && !self.topo.is_alive(to) {
            log::debug!("message to dead {to} dropped");
            return Ok(());
        }
        match msg {
            Msg::Cluster(cm) => self.on_cluster(to, cm),
            m @ (Msg::PlaceReq { .. } | Msg::MigrationReq { .. } | Msg::Recover { .. }) => self.serve(to, m),
            Msg::Deploy { dev, modules, decider } => self.on_deploy(to, dev, modules, decider),
            Msg::DeployAck { dev, server, placed, failed, more } => {
                self.on_deploy_ack(to, dev, server, placed, failed, more)
            }
            Msg::Placed { dev, confirmed, rejected } => self.on_placed(dev, to, confirmed, rejected)?,
            Msg::Start { dev } => self.on_start(dev),
            Msg::NewController { dev } => self.on_new_controller(to, dev)?,
            Msg::RoundOpen { dev, round } => {
                if self.round_matches(dev, round) {
                    self.begin_schedule(dev);
                }
            }
            Msg::MigrationDest(t) => self.on_migration_dest(to, t),
            Msg::StartMigration(t) => self.on_start_migration(to, t)?,
            Msg::Notify { dev, round, module, cost } => self.on_notify(dev, round, module, cost),
            Msg::MigrationFailed { dev, round, module, server } => self.on_migration_failed(to, dev, round, module, server),
        }
        Ok(())
    }

    fn process(&mut self, at: ServerId, msg: Msg) -> Result<(), SimError> {
        if !self.topo.is_alive(at) {
            return Ok(());
        }
        match msg {
            Msg::PlaceReq { dev, modules, snapshot, origin, recovery } => {
                self.on_place_req(at, dev, modules, snapshot, origin, recovery)?
            }
            Msg::MigrationReq { dev, round, modules, excluded } => {
                self.on_migration_req(at, dev, round, modules, excluded)?
            }
            Msg::Recover { dev, round, module } => self.on_recover(at, dev, round, module)?,
            _ => {}
        }
        Ok(())
    }

    // ---- clustering ----

    fn on_cluster(&mut self, to: ServerId, cm: ControlMessage) {
        let Some(st) = self.clusters.get_mut(&to) else { return };
        let r = match clustering::handle_cluster_message(st, &cm, &self.topo) {
            Ok(r) => r,
            Err(e) => {
                log::debug!("{to}: {e}");
                return;
            }
        };
        let deltas: Vec<Delta> = match self.topo.get(to) {
            Some(n) => r
                .deltas
                .into_iter()
                .filter(|d| match d {
                    Delta::AddMember(m) => !n.cluster_members.contains(m),
                    Delta::RemoveMember(m) => n.cluster_members.contains(m),
                    Delta::SetParent(p) => n.parent != *p,
                    Delta::AddChild(c) => !n.children.contains(c),
                    Delta::RemoveChild(c) => n.children.contains(c),
                })
                .collect(),
            None => Vec::new(),
        };
        if !deltas.is_empty() {
            if let Err(e) = clustering::apply_deltas(&mut self.topo, to, &deltas) {
                log::warn!("{to}: {e}");
            }
            if self.logging() {
                self.log_event(json!({"kind": "topology", "node": to, "deltas": format!("{deltas:?}")}));
            }
            self.refresh_all_costs();
        }
        for o in r.send {
            self.send(to, o.to, Msg::Cluster(o.msg));
        }
    }

    // ---- placement ----

    fn on_request(&mut self, d: usize) -> Result<(), SimError> {
        let pos = self.devices[d].walker.position;
        let Some(c) = nearest_controller(&self.topo, pos) else {
            log::warn!("device {} has no controller", self.devices[d].id);
            return Ok(());
        };
        let id = self.devices[d].id;
        self.topo.set_parent(id, Some(c))?;
        let origin = if self.policy == PolicyKind::Urmila { self.central } else { c };
        let dev = &mut self.devices[d];
        dev.controller = Some(c);
        dev.request_at = self.now;
        let modules: Vec<ModuleId> = dev.dag.placeable().collect();
        dev.pending = modules.iter().copied().collect();
        let snapshot = dev.placement.clone();
        if self.logging() {
            self.log_event(json!({"kind": "request", "device": id, "controller": c}));
        }
        self.send(id, origin, Msg::PlaceReq { dev: d, modules, snapshot, origin, recovery: false });
        Ok(())
    }

    fn decide_placement(
        &self,
        node: ServerId,
        d: usize,
        pending: &BTreeSet<ModuleId>,
        x: &mut Placement,
        recovery: bool,
    ) -> Result<PlacementDecision, CostError> {
        let ctx = self.ctx(d);
        match self.policy {
            PolicyKind::Proposed => {
                let mut view = self.view_of(node);
                let excluded = self
                    .batches
                    .get(&(d, node))
                    .map(|b| b.failed_servers.clone())
                    .unwrap_or_default();
                if recovery {
                    placement::dapt_failure_recovery(&ctx, node, pending, &excluded, x, &mut view)
                } else {
                    let ready = placement::ready_servers(&self.topo, node, &view, &excluded);
                    placement::dapt_place(&ctx, &ready, pending, x, &mut view)
                }
            }
            PolicyKind::Maas => {
                Ok(placement::edgeward_place(ctx.dag, &self.topo, node, pending, x, self.true_free(node)))
            }
            PolicyKind::Urmila => {
                let mut view = self.central_view();
                placement::global_greedy_place(&ctx, pending, x, &mut view)
            }
        }
    }

    fn on_place_req(
        &mut self,
        node: ServerId,
        d: usize,
        modules: Vec<ModuleId>,
        snapshot: Placement,
        origin: ServerId,
        recovery: bool,
    ) -> Result<(), SimError> {
        let pending: BTreeSet<ModuleId> = modules.into_iter().collect();
        let mut x = snapshot;
        let decision = self.decide_placement(node, d, &pending, &mut x, recovery)?;
        if self.policy == PolicyKind::Urmila {
            for &(_, s) in &decision.assigned {
                *self.reserved.entry(s).or_default() += 1;
            }
        }
        let by_server = decision.by_server();
        let parent = self.topo.parent(node).filter(|p| self.topo.is_alive(*p));
        let escalate = if parent.is_some() { decision.escalate.clone() } else { Vec::new() };
        {
            let batch = self.batches.entry((d, node)).or_insert_with(|| Batch::new(origin));
            if recovery {
                batch.recovering = batch.recovering.saturating_sub(1);
            }
            batch.outstanding += by_server.len() as u32;
            batch.rejected.extend(&decision.rejected);
            if parent.is_none() {
                batch.rejected.extend(&decision.escalate);
            }
        }
        if self.logging() {
            self.log_event(json!({
                "kind": "place_decision", "node": node, "device": self.devices[d].id,
                "assigned": decision.assigned, "escalate": decision.escalate, "rejected": decision.rejected,
            }));
        }
        for (s, ms) in by_server {
            if self.policy != PolicyKind::Urmila {
                *self.inflight.entry((node, s)).or_default() += ms.len() as u32;
            }
            self.send(node, s, Msg::Deploy { dev: d, modules: ms, decider: node });
        }
        if let (Some(p), false) = (parent, escalate.is_empty()) {
            self.send(node, p, Msg::PlaceReq { dev: d, modules: escalate, snapshot: x, origin, recovery: false });
        }
        self.check_batch(d, node)
    }

    fn on_deploy(&mut self, s: ServerId, d: usize, modules: Vec<ModuleId>, decider: ServerId) {
        if self.policy == PolicyKind::Urmila {
            if let Some(r) = self.reserved.get_mut(&s) {
                *r = r.saturating_sub(modules.len() as u32);
            }
        }
        let (placed, failed) = placement::handle_remote_placement(self.true_free(s), &modules);
        // refusals go back at once, confirmations once the containers are up
        if !failed.is_empty() {
            let more = !placed.is_empty();
            self.send(s, decider, Msg::DeployAck { dev: d, server: s, placed: Vec::new(), failed, more });
        }
        if !placed.is_empty() {
            let names = self.module_names(d, &placed);
            self.adjust_containers(s, &names, true);
            let ack = Msg::DeployAck { dev: d, server: s, placed, failed: Vec::new(), more: false };
            self.queue.push(self.now + self.sc.protocol.container_startup_s, Ev::Send { from: s, to: decider, msg: ack });
        }
        if self.policy != PolicyKind::Urmila {
            let slots = modules.len() as u32;
            match cost::internodal_latency(&self.topo, s, decider) {
                Ok(l) if decider != s => self.queue.push(self.now + l, Ev::Settle { decider, target: s, slots }),
                _ => self.settle(decider, s, slots),
            }
        }
    }

    fn settle(&mut self, decider: ServerId, target: ServerId, slots: u32) {
        if let Some(k) = self.inflight.get_mut(&(decider, target)) {
            *k = k.saturating_sub(slots);
            if *k == 0 {
                self.inflight.remove(&(decider, target));
            }
        }
    }

    fn on_deploy_ack(
        &mut self,
        node: ServerId,
        d: usize,
        server: ServerId,
        placed: Vec<ModuleId>,
        failed: Vec<ModuleId>,
        more: bool,
    ) {
        for &m in &placed {
            self.devices[d].placement.set(m, server);
        }
        let Some(batch) = self.batches.get_mut(&(d, node)) else {
            log::warn!("{node}: ack for unknown batch of device {d}");
            return;
        };
        if !more {
            batch.outstanding = batch.outstanding.saturating_sub(1);
        }
        batch.confirmed.extend(placed.iter().map(|&m| (m, server)));
        let origin = batch.origin;
        if !failed.is_empty() {
            batch.failed_servers.insert(server);
            batch.recovering += 1;
            let mut snapshot = self.devices[d].placement.clone();
            for &m in &failed {
                snapshot.clear(m);
            }
            self.serve(node, Msg::PlaceReq { dev: d, modules: failed, snapshot, origin, recovery: true });
        }
        if let Err(e) = self.check_batch(d, node) {
            log::warn!("{node}: {e}");
        }
    }

    fn check_batch(&mut self, d: usize, node: ServerId) -> Result<(), SimError> {
        let done = self
            .batches
            .get(&(d, node))
            .is_some_and(|b| b.outstanding == 0 && b.recovering == 0);
        if !done {
            return Ok(());
        }
        let Some(b) = self.batches.remove(&(d, node)) else { return Ok(()) };
        if b.origin == node {
            self.on_placed(d, node, b.confirmed, b.rejected)?;
        } else if !(b.confirmed.is_empty() && b.rejected.is_empty()) {
            self.send(node, b.origin, Msg::Placed { dev: d, confirmed: b.confirmed, rejected: b.rejected });
        }
        Ok(())
    }

    fn on_placed(
        &mut self,
        d: usize,
        origin: ServerId,
        confirmed: Vec<(ModuleId, ServerId)>,
        rejected: Vec<ModuleId>,
    ) -> Result<(), SimError> {
        let dev = &mut self.devices[d];
        for (m, _) in confirmed {
            dev.pending.remove(&m);
        }
        for m in rejected {
            dev.pending.remove(&m);
            dev.rejected.insert(m);
            self.metrics.counters.placement_rejections += 1;
        }
        if !dev.pending.is_empty() {
            return Ok(());
        }
        if dev.initial_done {
            self.refresh_cost(d);
            self.check_constraints(d);
            return Ok(());
        }
        dev.initial_done = true;
        let pdt = self.now - dev.request_at;
        let id = dev.id;
        let fully = dev.rejected.is_empty();
        self.pdts.push(pdt);
        self.metrics.counters.devices_placed += 1;
        self.check_constraints(d);
        if self.opts.optimality && fully {
            self.oracle_sample(d)?;
        }
        if self.logging() {
            let p: Vec<_> = self.devices[d].dag.placeable().map(|m| (m, self.devices[d].placement.get(m))).collect();
            self.log_event(json!({"kind": "placed", "device": id, "pdt": pdt, "placement": p}));
        }
        self.send(origin, id, Msg::Start { dev: d });
        Ok(())
    }

    fn oracle_sample(&mut self, d: usize) -> Result<(), SimError> {
        let dev = &self.devices[d];
        let own = dev.placement.container_usage(&dev.dag);
        let candidates: Vec<ServerId> = self.topo.servers().filter(|n| n.alive).map(|n| n.id).collect();
        let capacity = candidates
            .iter()
            .map(|&s| (s, self.true_free(s) + own.get(&s).copied().unwrap_or(0)))
            .collect();
        let policy_cost =
            cost::app_cost_unchecked(&self.topo, &dev.dag, &dev.placement, self.sc.weights, &self.sc.energy)?.weighted;
        let problem = OracleProblem {
            topo: &self.topo,
            dag: &dev.dag,
            device: dev.id,
            candidates,
            capacity,
            weights: self.sc.weights,
            profile: &self.sc.energy,
            node_budget: self.opts.oracle_budget,
        };
        match oracle::solve(&problem) {
            Ok(sol) => self.metrics.oracle_pairs.push((policy_cost, sol.cost.weighted)),
            Err(OracleError::BudgetExceeded { budget, .. }) => {
                log::warn!("device {}: oracle budget of {budget} nodes exceeded, sample skipped", dev.id)
            }
            Err(e) => log::warn!("device {}: oracle failed: {e}", dev.id),
        }
        Ok(())
    }

    fn on_start(&mut self, d: usize) {
        let c = self.task_cost(d);
        let now = self.now;
        self.devices[d].ledger.start(now, c);
    }

    // ---- mobility ----

    fn on_tick(&mut self) -> Result<(), SimError> {
        let dt = self.sc.mobility.tick_s;
        for d in 0..self.devices.len() {
            let dev = &mut self.devices[d];
            mobility::random_walk_step(&mut dev.walker, dt, self.sc.area_m, self.sc.mobility.speed_mps, &mut dev.rng_mob);
            let (id, pos) = (dev.id, dev.walker.position);
            self.topo.node_mut(id)?.position = pos;
            if dev.initial_done && dev.ledger.started() {
                self.check_departure(d);
            }
        }
        self.queue.push(self.now + dt, Ev::Tick);
        Ok(())
    }

    fn check_departure(&mut self, d: usize) {
        let dev = &self.devices[d];
        let Some(c) = dev.controller else { return };
        let Some(cn) = self.topo.get(c).filter(|n| n.alive) else { return };
        let w = &dev.walker;
        if !migration::departure_imminent(w.position, w.velocity(), cn.position, cn.coverage_radius, self.sc.migration.departure_fraction) {
            return;
        }
        let mut sensed = self.topo.sensed_fogs(&w.position);
        sensed.retain(|s| *s != c);
        if sensed.is_empty() {
            return;
        }
        let state = MobilityState { device: dev.id, position: w.position, heading: w.heading, speed: w.speed, sensed };
        let next = match self.policy {
            PolicyKind::Proposed => {
                let needed = dev.dag.placeable().filter(|&m| dev.placement.get(m) == Some(c)).count() as u32;
                let view = self.view_of(c);
                migration::analyze_mobility(&self.topo, c, &state, &view, needed, &mut self.devices[d].rng_pick)
            }
            _ => migration::nearest_sensed(&self.topo, c, &state),
        };
        let Some(next) = next else { return };
        self.metrics.migrations += 1;
        self.devices[d].controller = Some(next);
        if self.logging() {
            self.log_event(json!({"kind": "handover", "device": self.devices[d].id, "from": c, "to": next}));
        }
        self.send(c, next, Msg::NewController { dev: d });
    }

    fn on_new_controller(&mut self, to: ServerId, d: usize) -> Result<(), SimError> {
        if self.devices[d].controller != Some(to) {
            return Ok(());
        }
        let id = self.devices[d].id;
        let eps = self.params.epsilon;
        let admission = match self.sc.migration.admission {
            // still attached to the previous controller here
            AdmissionReference::PreHandover => match self.current_cost(d) {
                Some(c) => Admission::against(eps, c),
                None => Admission::against_current(eps),
            },
            AdmissionReference::Current => Admission::against_current(eps),
        };
        self.topo.set_parent(id, Some(to))?;
        self.refresh_cost(d);
        if self.devices[d].round.is_some() {
            self.devices[d].queued = Some((to, admission));
        } else {
            self.start_round(d, to, admission);
        }
        Ok(())
    }

    // ---- migration rounds ----

    fn current_cost(&self, d: usize) -> Option<f64> {
        let dev = &self.devices[d];
        cost::app_cost_unchecked(&self.topo, &dev.dag, &dev.placement, self.sc.weights, &self.sc.energy)
            .ok()
            .map(|c| c.weighted)
    }

    fn start_round(&mut self, d: usize, new_controller: ServerId, admission: Admission) {
        let dev = &self.devices[d];
        if !dev.rejected.is_empty() || !dev.pending.is_empty() {
            return;
        }
        let mut schedules = Vec::new();
        for sched in &dev.dag.schedules().schedules {
            let ms: Vec<ModuleId> = sched
                .iter()
                .copied()
                .filter(|&m| !dev.dag.modules[m].pinned && dev.placement.get(m).is_some())
                .collect();
            if !ms.is_empty() {
                schedules.push(migration::sort_by_ram(&dev.dag, &ms));
            }
        }
        if schedules.is_empty() {
            return;
        }
        let id = self.next_round;
        self.next_round += 1;
        self.metrics.counters.rounds_started += 1;
        let coordinator = if self.policy == PolicyKind::Urmila { self.central } else { new_controller };
        self.devices[d].round = Some(Round {
            id,
            new_controller,
            coordinator,
            schedules,
            pos: 0,
            waiting: BTreeSet::new(),
            costs: Vec::new(),
            specs: BTreeMap::new(),
            failed: BTreeMap::new(),
            retries: 0,
            admission,
        });
        if self.policy == PolicyKind::Urmila {
            self.send(new_controller, self.central, Msg::RoundOpen { dev: d, round: id });
        } else {
            self.begin_schedule(d);
        }
    }

    fn begin_schedule(&mut self, d: usize) {
        let dump = self.sc.migration.dump_fraction;
        let rem = self.sc.migration.remaining_fraction;
        let dev = &mut self.devices[d];
        let Some(r) = dev.round.as_mut() else { return };
        let modules = r.schedules[r.pos].clone();
        r.waiting = modules.iter().copied().collect();
        r.costs.clear();
        r.failed.clear();
        r.retries = 0;
        for &m in &modules {
            let mi: f64 = dev.dag.incoming(m).iter().map(|&f| dev.dag.flows[f].instructions_mi).sum();
            let spec = MoveSpec {
                module: m,
                dump_bits: dev.dag.modules[m].ram_mb * BITS_PER_MB * uniform(&mut dev.rng_mig, dump),
                remaining_mi: mi * uniform(&mut dev.rng_mig, rem),
            };
            r.specs.insert(m, spec);
        }
        let (round, pos, dc, coord) = (r.id, r.pos, r.new_controller, r.coordinator);
        match self.policy {
            PolicyKind::Proposed => {
                let groups = migration::group_by_layer(&dev.dag, &dev.placement, &modules);
                for (layer, ms) in groups {
                    let node = migration::deciding_node(&self.topo, dc, layer);
                    self.send(dc, node, Msg::MigrationReq { dev: d, round, modules: ms, excluded: BTreeSet::new() });
                }
            }
            PolicyKind::Maas | PolicyKind::Urmila => {
                self.send(coord, coord, Msg::MigrationReq { dev: d, round, modules, excluded: BTreeSet::new() });
            }
        }
        self.queue.push(
            self.now + self.sc.migration.notify_timeout_s,
            Ev::RoundTimeout { dev: d, round, schedule: pos },
        );
    }

    fn spec(&self, d: usize, m: ModuleId) -> Option<MoveSpec> {
        self.devices[d].round.as_ref().and_then(|r| r.specs.get(&m).copied())
    }

    fn dispatch_move(&mut self, node: ServerId, d: usize, round: u64, m: ModuleId, to: ServerId) {
        let Some(spec) = self.spec(d, m) else { return };
        let dev = &mut self.devices[d];
        let Some(from) = dev.placement.get(m) else { return };
        dev.attempt[m] += 1;
        let t = Transfer { dev: d, round, module: m, from, to, attempt: dev.attempt[m], spec };
        self.send(node, to, Msg::MigrationDest(t));
    }

    fn stay(&mut self, node: ServerId, d: usize, round: u64, m: ModuleId) {
        if let Some(coord) = self.coordinator(d) {
            self.send(node, coord, Msg::Notify { dev: d, round, module: m, cost: None });
        }
    }

    fn on_migration_req(
        &mut self,
        node: ServerId,
        d: usize,
        round: u64,
        modules: Vec<ModuleId>,
        excluded: BTreeSet<ServerId>,
    ) -> Result<(), SimError> {
        if !self.round_matches(d, round) {
            return Ok(());
        }
        let waiting = self.devices[d].round.as_ref().map(|r| r.waiting.clone()).unwrap_or_default();
        let (live, gone): (Vec<ModuleId>, Vec<ModuleId>) =
            modules.into_iter().filter(|m| waiting.contains(m)).partition(|&m| self.movable(d, m));
        for m in gone {
            self.stay(node, d, round, m);
        }
        let parent = self.topo.parent(node).filter(|p| self.topo.is_alive(*p));
        match self.policy {
            PolicyKind::Proposed => {
                let specs: Vec<MoveSpec> = live.iter().filter_map(|&m| self.spec(d, m)).collect();
                let mut x = self.devices[d].placement.clone();
                let mut view = self.view_of(node);
                let admission = self.devices[d].round.as_ref().map(|r| r.admission);
                let admission = admission.unwrap_or(Admission::against_current(self.params.epsilon));
                let ctx = self.ctx(d);
                let dec = migration::decide_at_node(
                    &ctx,
                    &self.params,
                    admission,
                    node,
                    &specs,
                    &mut x,
                    &mut view,
                    &excluded,
                )?;
                if self.logging() {
                    let moves: Vec<_> = dec.moves.iter().map(|(m, s, _)| (*m, *s)).collect();
                    self.log_event(json!({
                        "kind": "migration_decision", "node": node, "device": self.devices[d].id,
                        "moves": moves, "escalate": dec.escalate, "stay": dec.stay,
                    }));
                }
                for (m, to, _) in dec.moves {
                    self.dispatch_move(node, d, round, m, to);
                }
                if let (Some(p), false) = (parent, dec.escalate.is_empty()) {
                    self.send(node, p, Msg::MigrationReq { dev: d, round, modules: dec.escalate, excluded });
                }
                for m in dec.stay {
                    self.stay(node, d, round, m);
                }
            }
            PolicyKind::Maas => {
                let step = baselines::edgeward_migration_step(
                    &self.topo,
                    node,
                    &live,
                    &self.devices[d].placement,
                    self.true_free(node),
                );
                for (m, to) in step.moves {
                    self.dispatch_move(node, d, round, m, to);
                }
                if let (Some(p), false) = (parent, step.escalate.is_empty()) {
                    self.send(node, p, Msg::MigrationReq { dev: d, round, modules: step.escalate, excluded });
                }
                for m in step.stay {
                    self.stay(node, d, round, m);
                }
            }
            PolicyKind::Urmila => {
                let mut x = self.devices[d].placement.clone();
                let mut view = self.central_view();
                let mut targets = Vec::new();
                {
                    let ctx = self.ctx(d);
                    for &m in &live {
                        let t = baselines::central_migration_target(&ctx, &x, m, &view)?;
                        if let Some(to) = t {
                            x.set(m, to);
                            if let Some(f) = view.get_mut(&to) {
                                *f = f.saturating_sub(1);
                            }
                        }
                        targets.push((m, t));
                    }
                }
                for (m, t) in targets {
                    match t {
                        Some(to) => {
                            *self.reserved.entry(to).or_default() += 1;
                            self.dispatch_move(node, d, round, m, to);
                        }
                        None => self.stay(node, d, round, m),
                    }
                }
            }
        }
        Ok(())
    }

    fn on_migration_dest(&mut self, to: ServerId, t: Transfer) {
        if self.policy == PolicyKind::Urmila {
            if let Some(r) = self.reserved.get_mut(&to) {
                *r = r.saturating_sub(1);
            }
        }
        let d = t.dev;
        if !self.round_matches(d, t.round)
            || self.devices[d].attempt[t.module] != t.attempt
            || self.devices[d].placement.get(t.module) != Some(t.from)
        {
            return;
        }
        let Some(coord) = self.coordinator(d) else { return };
        let p = self.sc.failure.migration_p;
        let injected = p > 0.0 && self.devices[d].rng_fail.gen::<f64>() < p;
        if injected {
            self.metrics.counters.failures_injected += 1;
        }
        if injected || self.true_free(to) == 0 {
            if self.logging() {
                self.log_event(json!({
                    "kind": "migration_refused", "device": self.devices[d].id, "module": t.module,
                    "server": to, "injected": injected,
                }));
            }
            self.send(to, coord, Msg::MigrationFailed { dev: d, round: t.round, module: t.module, server: to });
            return;
        }
        let names = self.module_names(d, &[t.module]);
        self.adjust_containers(to, &names, true);
        self.send(to, t.from, Msg::StartMigration(t));
    }

    fn on_start_migration(&mut self, from: ServerId, t: Transfer) -> Result<(), SimError> {
        let d = t.dev;
        let m = t.module;
        let names = self.module_names(d, &[m]);
        let dev = &self.devices[d];
        if !self.round_matches(d, t.round)
            || dev.attempt[m] != t.attempt
            || dev.placement.get(m) != Some(from)
            || dev.migrating[m]
        {
            self.adjust_containers(t.to, &names, false);
            return Ok(());
        }
        let w = self.sc.weights;
        let c = if self.policy == PolicyKind::Urmila {
            baselines::relayed_migration_cost(
                &self.topo,
                &self.sc.energy,
                &self.params,
                t.spec.dump_bits,
                from,
                self.central,
                t.to,
                t.spec.remaining_mi,
                w,
            )?
        } else {
            cost::module_migration_cost(&self.topo, &self.sc.energy, &self.params, t.spec.dump_bits, from, t.to, t.spec.remaining_mi, w)?
        };
        let sched = self.devices[d].dag.schedules().to_value[m] - 1;
        let now = self.now;
        let dev = &mut self.devices[d];
        dev.migrating[m] = true;
        dev.ledger.add_window(Window { schedule: sched, start: now, end: now + c.time });
        self.metrics.counters.module_moves += 1;
        if self.logging() {
            self.log_event(json!({
                "kind": "migration_start", "device": self.devices[d].id, "module": m,
                "from": from, "to": t.to, "time": c.time, "energy": c.energy,
            }));
        }
        self.queue.push(now + c.time, Ev::MigrationEnd { t, cost: c });
        Ok(())
    }

    fn on_migration_end(&mut self, t: Transfer, c: MigrationCost) {
        let d = t.dev;
        let names = self.module_names(d, &[t.module]);
        self.adjust_containers(t.from, &names, false);
        let dev = &mut self.devices[d];
        dev.placement.set(t.module, t.to);
        dev.migrating[t.module] = false;
        self.refresh_cost(d);
        self.check_constraints(d);
        if let (true, Some(coord)) = (self.round_matches(d, t.round), self.coordinator(d)) {
            self.send(t.to, coord, Msg::Notify { dev: d, round: t.round, module: t.module, cost: Some(c) });
        }
    }

    fn on_notify(&mut self, d: usize, round: u64, m: ModuleId, c: Option<MigrationCost>) {
        let Some(r) = self.devices[d].round.as_mut().filter(|r| r.id == round) else { return };
        if !r.waiting.remove(&m) {
            return;
        }
        r.costs.extend(c);
        if r.waiting.is_empty() {
            self.finish_schedule(d);
        }
    }

    fn finish_schedule(&mut self, d: usize) {
        let w = self.sc.weights;
        let Some(r) = self.devices[d].round.as_mut() else { return };
        if !r.costs.is_empty() {
            let sm = cost::schedule_migration_cost(&r.costs, w);
            self.metrics.cmt_s += sm.time;
            self.metrics.cmec_j += sm.energy;
        }
        r.pos += 1;
        if r.pos < r.schedules.len() {
            self.begin_schedule(d);
        } else {
            self.end_round(d);
        }
    }

    fn end_round(&mut self, d: usize) {
        self.metrics.counters.rounds_completed += 1;
        let dev = &mut self.devices[d];
        dev.round = None;
        if let Some((next, admission)) = dev.queued.take() {
            if dev.controller == Some(next) {
                self.start_round(d, next, admission);
            }
        }
    }

    fn on_migration_failed(&mut self, coord: ServerId, d: usize, round: u64, m: ModuleId, server: ServerId) {
        let Some(r) = self.devices[d].round.as_mut().filter(|r| r.id == round) else { return };
        if !r.waiting.contains(&m) {
            return;
        }
        if self.policy == PolicyKind::Proposed && self.sc.failure.recovery {
            r.failed.entry(m).or_default().insert(server);
            self.serve(coord, Msg::Recover { dev: d, round, module: m });
        } else {
            self.on_notify(d, round, m, None);
        }
    }

    fn on_recover(&mut self, node: ServerId, d: usize, round: u64, m: ModuleId) -> Result<(), SimError> {
        let Some(r) = self.devices[d].round.as_ref().filter(|r| r.id == round) else { return Ok(()) };
        if !r.waiting.contains(&m) {
            return Ok(());
        }
        if !self.movable(d, m) {
            if !self.devices[d].migrating[m] {
                self.on_notify(d, round, m, None);
            }
            return Ok(());
        }
        let failed = r.failed.get(&m).cloned().unwrap_or_default();
        let Some(spec) = r.specs.get(&m).copied() else { return Ok(()) };
        let admission = r.admission;
        self.metrics.counters.recoveries += 1;
        let view = self.view_of(node);
        let out = {
            let ctx = self.ctx(d);
            migration::mmt_failure_recovery(
                &ctx,
                &self.params,
                admission,
                node,
                spec,
                &self.devices[d].placement,
                &view,
                &failed,
            )?
        };
        if self.logging() {
            self.log_event(json!({
                "kind": "migration_recovery", "node": node, "device": self.devices[d].id,
                "module": m, "outcome": format!("{out:?}"),
            }));
        }
        match out {
            RecoveryOutcome::Move(to, _) => self.dispatch_move(node, d, round, m, to),
            RecoveryOutcome::Escalate(p) => {
                self.send(node, p, Msg::MigrationReq { dev: d, round, modules: vec![m], excluded: failed })
            }
            RecoveryOutcome::Stay => self.on_notify(d, round, m, None),
        }
        Ok(())
    }

    fn on_round_timeout(&mut self, d: usize, round: u64, schedule: usize) {
        let recovery = self.policy == PolicyKind::Proposed && self.sc.failure.recovery;
        let dev = &mut self.devices[d];
        let Some(r) = dev.round.as_mut().filter(|r| r.id == round && r.pos == schedule) else { return };
        let silent: Vec<ModuleId> = r.waiting.iter().copied().filter(|&m| !dev.migrating[m]).collect();
        if !silent.is_empty() {
            self.metrics.counters.round_timeouts += 1;
            let coord = r.coordinator;
            if recovery && r.retries < MAX_ROUND_RETRIES {
                r.retries += 1;
                for &m in &silent {
                    dev.attempt[m] += 1;
                }
                for m in silent {
                    self.serve(coord, Msg::Recover { dev: d, round, module: m });
                }
            } else {
                for m in silent {
                    self.on_notify(d, round, m, None);
                }
            }
        }
        let still = self.devices[d].round.as_ref().is_some_and(|r| r.id == round && r.pos == schedule);
        if still {
            self.queue.push(
                self.now + self.sc.migration.notify_timeout_s,
                Ev::RoundTimeout { dev: d, round, schedule },
            );
        }
    }

    // ---- server crashes ----

    fn on_crash(&mut self, node: ServerId) -> Result<(), SimError> {
        if !self.topo.is_alive(node) {
            return Ok(());
        }
        let neighbours = clustering::broadcast_scope(&self.topo, node);
        self.topo.set_alive(node, false)?;
        self.metrics.counters.crashes += 1;
        self.refresh_all_costs();
        if self.logging() {
            self.log_event(json!({"kind": "crash", "node": node}));
        }
        let hb = self.sc.failure.heartbeat_s;
        let detect = if hb > 0.0 {
            (self.now / hb).ceil() * hb + self.sc.failure.missed_heartbeats as f64 * hb
        } else {
            self.now
        };
        self.queue.push(detect, Ev::CrashDetected { node, neighbours });
        Ok(())
    }

    fn on_crash_detected(&mut self, node: ServerId, neighbours: Vec<ServerId>) -> Result<(), SimError> {
        for nb in neighbours {
            if self.topo.is_alive(nb) {
                let cm = ControlMessage {
                    kind: ControlKind::StartFogFailureRecovery,
                    source: nb,
                    payload: ControlPayload::Failed(node),
                };
                self.on_cluster(nb, cm);
            }
        }
        for d in 0..self.devices.len() {
            if self.devices[d].controller == Some(node) {
                let pos = self.devices[d].walker.position;
                if let Some(c) = nearest_controller(&self.topo, pos) {
                    let id = self.devices[d].id;
                    self.topo.set_parent(id, Some(c))?;
                    self.devices[d].controller = Some(c);
                }
            }
            if self.devices[d].round.as_ref().is_some_and(|r| r.coordinator == node) {
                self.devices[d].round = None;
                self.devices[d].queued = None;
            }
            let dev = &mut self.devices[d];
            if !dev.initial_done {
                continue;
            }
            let lost: Vec<ModuleId> = dev
                .dag
                .placeable()
                .filter(|&m| dev.placement.get(m) == Some(node) && !dev.migrating[m])
                .collect();
            if lost.is_empty() {
                continue;
            }
            for &m in &lost {
                dev.placement.clear(m);
                dev.pending.insert(m);
            }
            let (id, snapshot) = (dev.id, dev.placement.clone());
            let origin = if self.policy == PolicyKind::Urmila { Some(self.central) } else { dev.controller };
            if let Some(origin) = origin {
                self.send(id, origin, Msg::PlaceReq { dev: d, modules: lost, snapshot, origin, recovery: false });
            }
            self.refresh_cost(d);
        }
        Ok(())
    }
}
