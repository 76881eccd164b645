// SPDX-License-Identifier: Apache-2.0

//! Scenario files: everything a run needs, with defaults for every field.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::app::{AppError, AppTemplate, Range};
use crate::baselines::PolicyKind;
use crate::cost::{CostWeights, EnergyProfile, Epsilon, MigrationParams};
use crate::topology::{
    ClusterLatency, LinkParams, NodeSpec, Point, ServerId, Topology, TopologyError, TopologySpec,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    App(#[from] AppError),
    #[error("no scenario file or bundled scenario named `{0}`")]
    Unknown(String),
}

fn invalid(field: &str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field: field.to_string(), reason: reason.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub horizon_s: f64,
    pub seed: u64,
    pub policy: PolicyKind,
    /// Devices send their placement requests at `warmup_s + U[0, request_jitter_s)`.
    pub warmup_s: f64,
    pub request_jitter_s: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { horizon_s: 400.0, seed: 1, policy: PolicyKind::Proposed, warmup_s: 1.0, request_jitter_s: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MigrationConfig {
    pub i_mig_s: f64,
    pub epsilon: Epsilon,
    pub dump_fraction: [f64; 2],
    /// Share of one task's instructions still to run when a module moves.
    pub remaining_fraction: [f64; 2],
    /// Departure is flagged beyond this share of the coverage radius.
    pub departure_fraction: f64,
    pub notify_timeout_s: f64,
    pub admission: AdmissionReference,
}

/// What a migrated placement's cost is compared against.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmissionReference {
    /// The cost the device had before the handover, at its old controller.
    PreHandover,
    /// The cost of the unchanged placement with the device already at the
    /// new controller.
    Current,
}

impl Default for MigrationConfig {
    fn default() -> Self {
        let p = MigrationParams::default();
        Self {
            i_mig_s: p.i_mig,
            epsilon: p.epsilon,
            dump_fraction: p.dump_fraction,
            remaining_fraction: [0.0, 1.0],
            departure_fraction: 0.95,
            notify_timeout_s: 1.0,
            admission: AdmissionReference::Current,
        }
    }
}

impl MigrationConfig {
    pub fn params(&self) -> MigrationParams {
        MigrationParams { i_mig: self.i_mig_s, epsilon: self.epsilon, dump_fraction: self.dump_fraction }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Time a node spends on one placement or migration request.
    pub decision_service_s: f64,
    pub container_startup_s: f64,
    /// Delay before fog nodes announce their initial container status.
    pub status_broadcast_s: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self { decision_service_s: 0.001, container_startup_s: 0.1, status_broadcast_s: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilityConfig {
    pub enabled: bool,
    pub tick_s: f64,
    pub speed_mps: [f64; 2],
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self { enabled: true, tick_s: 0.1, speed_mps: [0.5, 4.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Crash {
    pub node: ServerId,
    pub at_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FailureConfig {
    /// Probability that a migration confirmation fails.
    pub migration_p: f64,
    /// Whether the proposed policy runs its recovery path (baselines never do).
    pub recovery: bool,
    pub heartbeat_s: f64,
    /// Missed heartbeats before a neighbour is declared dead.
    pub missed_heartbeats: u32,
    pub crashes: Vec<Crash>,
}

impl Default for FailureConfig {
    fn default() -> Self {
        Self { migration_p: 0.0, recovery: true, heartbeat_s: 1.0, missed_heartbeats: 3, crashes: Vec::new() }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterruptMode {
    /// Tasks wait for the module to come back.
    Delay,
    /// Tasks hitting a downtime window are dropped.
    Discard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    pub count: u32,
    pub app: String,
    pub cpu_mips: f64,
    pub sensor_latency_s: f64,
    pub interrupted: InterruptMode,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            count: 80,
            app: "ECGMH".into(),
            cpu_mips: 500.0,
            sensor_latency_s: 0.002,
            interrupted: InterruptMode::Delay,
        }
    }
}

/// One generated fog level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelLayout {
    /// Nodes sit at the cell centres of a `cols x rows` grid over the area.
    pub cols: u32,
    pub rows: u32,
    pub cpu_mips: Range,
    pub capacity: u32,
    #[serde(default)]
    pub coverage_radius: f64,
    /// Latency of cluster links between in-range nodes on this level.
    #[serde(default = "zero_range")]
    pub cluster_latency_s: Range,
}

fn zero_range() -> Range {
    Range::Fixed(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Layout {
    /// Fog levels from level 1 upwards.
    pub levels: Vec<LevelLayout>,
    pub cloud_cpu_mips: f64,
    pub cloud_capacity: u32,
    /// Vertical latencies from the device uplink upwards.
    pub latency_s: Vec<f64>,
    pub bw_up_bps: Vec<f64>,
    pub bw_down_bps: Vec<f64>,
    pub bw_cluster_bps: f64,
}

impl Default for Layout {
    fn default() -> Self {
        let level = |cols, rows, cpu, capacity, radius, cl| LevelLayout {
            cols,
            rows,
            cpu_mips: cpu,
            capacity,
            coverage_radius: radius,
            cluster_latency_s: cl,
        };
        Self {
            levels: vec![
                level(6, 5, Range::Span([3000.0, 4000.0]), 6, 200.0, Range::Span([0.003, 0.005])),
                level(5, 1, Range::Fixed(8000.0), 40, 400.0, Range::Span([0.020, 0.025])),
                level(1, 1, Range::Fixed(10000.0), 80, 0.0, Range::Fixed(0.0)),
            ],
            cloud_cpu_mips: 80000.0,
            cloud_capacity: 100_000,
            latency_s: vec![0.005, 0.025, 0.050, 0.150],
            bw_up_bps: vec![100e6, 10e9, 10e9, 10e9],
            bw_down_bps: vec![200e6, 10e9, 10e9, 10e9],
            bw_cluster_bps: 10e9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TopologySource {
    Generated(Layout),
    Explicit(TopologySpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Simulated area in metres.
    pub area_m: [f64; 2],
    pub run: RunConfig,
    pub weights: CostWeights,
    pub energy: EnergyProfile,
    pub migration: MigrationConfig,
    pub protocol: ProtocolConfig,
    pub mobility: MobilityConfig,
    pub failure: FailureConfig,
    pub devices: DeviceConfig,
    pub topology: TopologySource,
    /// Extra application templates, looked up by name before the bundled ones.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub apps: Vec<AppTemplate>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            area_m: [2000.0, 1000.0],
            run: RunConfig::default(),
            weights: CostWeights::default(),
            energy: EnergyProfile::default(),
            migration: MigrationConfig::default(),
            protocol: ProtocolConfig::default(),
            mobility: MobilityConfig::default(),
            failure: FailureConfig::default(),
            devices: DeviceConfig::default(),
            topology: TopologySource::Generated(Layout::default()),
            apps: Vec::new(),
        }
    }
}

const BUNDLED: [(&str, &str); 3] = [
    ("paper_table3", include_str!("../scenarios/paper_table3.toml")),
    ("desk", include_str!("../scenarios/desk.toml")),
    ("fig1", include_str!("../scenarios/fig1.toml")),
];

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn bundled_names() -> Vec<&'static str> {
        BUNDLED.iter().map(|(n, _)| *n).collect()
    }

    pub fn bundled(name: &str) -> Result<Self, ScenarioError> {
        let key = name.to_ascii_lowercase();
        match BUNDLED.iter().find(|(n, _)| *n == key) {
            Some((_, text)) => Self::from_toml(text),
            None => Err(ScenarioError::Unknown(name.to_string())),
        }
    }

    /// Loads a scenario file, falling back to a bundled scenario of that name.
    pub fn load(path_or_name: &str) -> Result<Self, ScenarioError> {
        let p = Path::new(path_or_name);
        if p.is_file() {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ScenarioError::Io { path: path_or_name.to_string(), source: e })?;
            return Self::from_toml(&text);
        }
        Self::bundled(path_or_name)
    }

    /// Canonical TOML rendering of every field, defaults included.
    pub fn effective_config(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    pub fn app_template(&self) -> Result<AppTemplate, ScenarioError> {
        if let Some(t) = self.apps.iter().find(|t| t.name.eq_ignore_ascii_case(&self.devices.app)) {
            return Ok(t.clone());
        }
        Ok(AppTemplate::bundled(&self.devices.app)?)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let pos = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("must be > 0, got {v}")))
            }
        };
        let nonneg = |field: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("must be >= 0, got {v}")))
            }
        };
        let span = |field: &str, r: [f64; 2], lo_ok: f64| {
            if r[0].is_finite() && r[1].is_finite() && r[0] >= lo_ok && r[0] <= r[1] {
                Ok(())
            } else {
                Err(invalid(field, format!("[{}, {}] is not a valid range", r[0], r[1])))
            }
        };
        pos("area_m[0]", self.area_m[0])?;
        pos("area_m[1]", self.area_m[1])?;
        nonneg("run.horizon_s", self.run.horizon_s)?;
        nonneg("run.warmup_s", self.run.warmup_s)?;
        nonneg("run.request_jitter_s", self.run.request_jitter_s)?;
        self.weights.validate().map_err(|e| invalid("weights", e.to_string()))?;
        self.energy.validate().map_err(|e| invalid("energy", e.to_string()))?;
        self.migration.params().validate().map_err(|e| invalid("migration", e.to_string()))?;
        span("migration.remaining_fraction", self.migration.remaining_fraction, 0.0)?;
        if self.migration.remaining_fraction[1] > 1.0 {
            return Err(invalid("migration.remaining_fraction", "upper bound must be <= 1"));
        }
        let d = self.migration.departure_fraction;
        if !(d > 0.0 && d <= 1.0) {
            return Err(invalid("migration.departure_fraction", format!("must be in (0, 1], got {d}")));
        }
        pos("migration.notify_timeout_s", self.migration.notify_timeout_s)?;
        nonneg("protocol.decision_service_s", self.protocol.decision_service_s)?;
        nonneg("protocol.container_startup_s", self.protocol.container_startup_s)?;
        nonneg("protocol.status_broadcast_s", self.protocol.status_broadcast_s)?;
        pos("mobility.tick_s", self.mobility.tick_s)?;
        span("mobility.speed_mps", self.mobility.speed_mps, 0.0)?;
        let p = self.failure.migration_p;
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid("failure.migration_p", format!("must be in [0, 1], got {p}")));
        }
        pos("failure.heartbeat_s", self.failure.heartbeat_s)?;
        for c in &self.failure.crashes {
            nonneg("failure.crashes.at_s", c.at_s)?;
            if c.node.is_device() {
                return Err(invalid("failure.crashes.node", format!("{} is a device", c.node)));
            }
        }
        pos("devices.cpu_mips", self.devices.cpu_mips)?;
        nonneg("devices.sensor_latency_s", self.devices.sensor_latency_s)?;
        let template = self.app_template()?;
        pos("apps.sensor_interval_s", template.sensor_interval_s)?;
        match &self.topology {
            TopologySource::Generated(l) => {
                if l.levels.is_empty() {
                    return Err(invalid("topology.levels", "at least one fog level is required"));
                }
                for (k, lv) in l.levels.iter().enumerate() {
                    let f = format!("topology.levels[{k}]");
                    if lv.cols == 0 || lv.rows == 0 {
                        return Err(invalid(&f, "cols and rows must be >= 1"));
                    }
                    span(&format!("{f}.cpu_mips"), [lv.cpu_mips.bounds().0, lv.cpu_mips.bounds().1], f64::MIN_POSITIVE)?;
                    nonneg(&format!("{f}.coverage_radius"), lv.coverage_radius)?;
                    let (a, b) = lv.cluster_latency_s.bounds();
                    span(&format!("{f}.cluster_latency_s"), [a, b], 0.0)?;
                }
                pos("topology.cloud_cpu_mips", l.cloud_cpu_mips)?;
                let need = l.levels.len() + 1;
                for (name, v) in [("latency_s", &l.latency_s), ("bw_up_bps", &l.bw_up_bps), ("bw_down_bps", &l.bw_down_bps)] {
                    if v.len() < need {
                        return Err(invalid(&format!("topology.{name}"), format!("needs {need} entries, has {}", v.len())));
                    }
                }
                pos("topology.bw_cluster_bps", l.bw_cluster_bps)?;
                let spec = self.topology_spec(&mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
                Topology::build(&spec)?;
            }
            TopologySource::Explicit(spec) => {
                Topology::build(spec)?;
                let has_l1 = spec.nodes.iter().any(|n| n.id.level == 1);
                if !has_l1 {
                    return Err(invalid("topology.nodes", "no level-1 server for devices to attach to"));
                }
            }
        }
        Ok(())
    }

    /// Fog and cloud nodes of the scenario. Generated layouts draw CPU rates
    /// and cluster latencies from `rng`.
    pub fn topology_spec<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TopologySpec, ScenarioError> {
        match &self.topology {
            TopologySource::Explicit(spec) => Ok(spec.clone()),
            TopologySource::Generated(l) => Ok(generate(l, self.area_m, rng)),
        }
    }
}

fn generate<R: Rng + ?Sized>(l: &Layout, area: [f64; 2], rng: &mut R) -> TopologySpec {
    let top = l.levels.len() as u8;
    let cloud = ServerId::new(top + 1, 1);
    let centre = Point::new(area[0] / 2.0, area[1] / 2.0);
    let mut nodes: Vec<NodeSpec> = Vec::new();
    let mut per_level: Vec<Vec<(ServerId, Point, f64)>> = Vec::new();
    for (k, lv) in l.levels.iter().enumerate() {
        let level = k as u8 + 1;
        let mut here = Vec::new();
        let mut index = 1;
        for r in 0..lv.rows {
            for c in 0..lv.cols {
                let p = Point::new(
                    (c as f64 + 0.5) * area[0] / lv.cols as f64,
                    (r as f64 + 0.5) * area[1] / lv.rows as f64,
                );
                let id = ServerId::new(level, index);
                index += 1;
                here.push((id, p, lv.coverage_radius));
                nodes.push(NodeSpec {
                    id,
                    cpu_mips: lv.cpu_mips.sample(rng),
                    capacity: lv.capacity,
                    ram_mb: None,
                    position: p,
                    coverage_radius: lv.coverage_radius,
                    parent: None,
                    cluster_members: Vec::new(),
                });
            }
        }
        per_level.push(here);
    }
    nodes.push(NodeSpec {
        id: cloud,
        cpu_mips: l.cloud_cpu_mips,
        capacity: l.cloud_capacity,
        ram_mb: None,
        position: centre,
        coverage_radius: 0.0,
        parent: None,
        cluster_members: Vec::new(),
    });
    // nearest node one level up becomes the parent
    for n in nodes.iter_mut() {
        let lvl = n.id.level as usize;
        if n.id == cloud {
            continue;
        }
        n.parent = Some(if lvl == top as usize {
            cloud
        } else {
            let mut best: Option<(f64, ServerId)> = None;
            for &(id, p, _) in &per_level[lvl] {
                let d = p.distance(&n.position);
                if best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, id));
                }
            }
            best.expect("upper level is non-empty").1
        });
    }
    let mut overrides = Vec::new();
    let mut lat_cluster = vec![0.0; top as usize + 2];
    for (k, lv) in l.levels.iter().enumerate() {
        let (a, b) = lv.cluster_latency_s.bounds();
        lat_cluster[k + 1] = (a + b) / 2.0;
        let here = &per_level[k];
        for i in 0..here.len() {
            for j in i + 1..here.len() {
                let (ia, pa, ra) = here[i];
                let (ib, pb, rb) = here[j];
                if ra > 0.0 && rb > 0.0 && pa.distance(&pb) <= ra + rb {
                    overrides.push(ClusterLatency { a: ia, b: ib, latency: lv.cluster_latency_s.sample(rng) });
                }
            }
        }
    }
    let levels = top as usize + 1;
    let links = LinkParams {
        lat_up: l.latency_s[..levels].to_vec(),
        lat_down: l.latency_s[..levels].to_vec(),
        lat_cluster,
        bw_up: l.bw_up_bps[..levels].to_vec(),
        bw_down: l.bw_down_bps[..levels].to_vec(),
        bw_cluster: vec![l.bw_cluster_bps; levels + 1],
        cluster_latency_overrides: overrides,
    };
    TopologySpec { max_fog_level: top, nodes, links }
}

/// Servers a scenario refers to by id that do not exist.
pub fn unknown_crash_targets(s: &Scenario, spec: &TopologySpec) -> Vec<ServerId> {
    let ids: BTreeSet<ServerId> = spec.nodes.iter().map(|n| n.id).collect();
    s.failure.crashes.iter().map(|c| c.node).filter(|n| !ids.contains(n)).collect()
}
