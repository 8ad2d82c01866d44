//! Scenario files: which sensors, processes and control actions make up a run.
//!
//! The key set is documented in `docs/scenario.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddrV4;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::control::{ControlChange, Plan, Reconciler, Registration, Rejection};
use crate::edge::{PolicyMap, SensorDesc, SharedPolicy};
use crate::ids::{IngressPort, ProcessId, StreamId};
use crate::metrics::CpuProxy;
use crate::qoc::{bandwidth_full, DetectionTable, RateModel, Requirement, Strategy};
use crate::sensor::StreamSource;

pub const DEFAULT_CONTROL_PORT: u16 = 9900;

fn default_edge_control() -> SocketAddrV4 {
    SocketAddrV4::new([127, 0, 0, 1].into(), DEFAULT_CONTROL_PORT)
}
fn default_queue_capacity() -> usize {
    1024
}
fn default_recv_buffer() -> usize {
    8 << 20
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeConfig {
    #[serde(default = "default_edge_control")]
    pub control_addr: SocketAddrV4,
    /// Datagrams each egress queue holds before overflow drops start.
    #[serde(default = "default_queue_capacity")]
    pub queue_capacity: usize,
    /// Requested socket receive buffer for ingress and sink data ports, in bytes.
    #[serde(default = "default_recv_buffer")]
    pub recv_buffer_bytes: usize,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        EdgeConfig {
            control_addr: default_edge_control(),
            queue_capacity: default_queue_capacity(),
            recv_buffer_bytes: default_recv_buffer(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub stream_id: StreamId,
    /// Edge port this stream arrives on.
    pub ingress_addr: SocketAddrV4,
    /// Where the sensor listens for quality notifications.
    pub control_addr: SocketAddrV4,
    pub source: StreamSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequirementConfig {
    pub stream_id: StreamId,
    /// Minimum detection rate.
    pub threshold: f64,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessConfig {
    pub process_id: ProcessId,
    /// Where the edge delivers this process's packets.
    pub egress_addr: SocketAddrV4,
    pub requirements: Vec<RequirementConfig>,
    /// Register when the run starts; otherwise wait for a timeline action.
    #[serde(default = "default_true")]
    pub start_registered: bool,
}

impl ProcessConfig {
    pub fn registration(&self, egress_addr: SocketAddrV4) -> Registration {
        Registration {
            process: self.process_id,
            egress_addr,
            requirements: self
                .requirements
                .iter()
                .map(|r| (r.stream_id, Requirement::new(r.threshold, r.strategy)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimelineAction {
    Register {
        process_id: ProcessId,
    },
    Deregister {
        process_id: ProcessId,
    },
    /// Add or replace one requirement and re-register the process.
    SetRequirement {
        process_id: ProcessId,
        stream_id: StreamId,
        threshold: f64,
        strategy: Strategy,
    },
    RemoveRequirement {
        process_id: ProcessId,
        stream_id: StreamId,
    },
    /// Operator override of one egress's edge suppression.
    SetDelta {
        stream_id: StreamId,
        process_id: ProcessId,
        delta: f64,
    },
    /// Drop all operator overrides on a stream.
    ClearDeltas {
        stream_id: StreamId,
    },
}

impl TimelineAction {
    fn process(&self) -> Option<ProcessId> {
        match self {
            TimelineAction::Register { process_id }
            | TimelineAction::Deregister { process_id }
            | TimelineAction::SetRequirement { process_id, .. }
            | TimelineAction::RemoveRequirement { process_id, .. }
            | TimelineAction::SetDelta { process_id, .. } => Some(*process_id),
            TimelineAction::ClearDeltas { .. } => None,
        }
    }

    fn stream(&self) -> Option<StreamId> {
        match self {
            TimelineAction::SetRequirement { stream_id, .. }
            | TimelineAction::RemoveRequirement { stream_id, .. }
            | TimelineAction::SetDelta { stream_id, .. }
            | TimelineAction::ClearDeltas { stream_id } => Some(*stream_id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelineEvent {
    pub at_s: f64,
    pub action: TimelineAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    pub duration_s: f64,
    /// Detection table file; the built-in table when absent.
    #[serde(default)]
    pub detection_table: Option<PathBuf>,
    #[serde(default)]
    pub edge: EdgeConfig,
    pub sensors: Vec<SensorConfig>,
    #[serde(default)]
    pub processes: Vec<ProcessConfig>,
    #[serde(default)]
    pub timeline: Vec<TimelineEvent>,
    #[serde(default)]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub cpu: CpuProxy,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("scenario schema: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("scenario is invalid:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut s: Scenario = serde_json::from_str(&text)?;
        // Relative paths inside the scenario are relative to its file.
        let base = path.parent().unwrap_or(Path::new(""));
        s.resolve_paths(base);
        Ok(s)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = &mut self.detection_table {
            fix(p);
        }
        for sensor in &mut self.sensors {
            if let StreamSource::Replay { path, .. } = &mut sensor.source {
                fix(path);
            }
        }
    }

    /// Synthetic sources seeded from the scenario seed.
    pub fn effective_source(&self, sensor: &SensorConfig) -> StreamSource {
        match &sensor.source {
            StreamSource::Synthetic(spec) => {
                let mut spec = spec.clone();
                spec.seed ^= self.seed;
                StreamSource::Synthetic(spec)
            }
            other => other.clone(),
        }
    }

    pub fn table(&self) -> Result<DetectionTable, String> {
        match &self.detection_table {
            None => Ok(DetectionTable::builtin()),
            Some(p) => DetectionTable::load(p).map_err(|e| e.to_string()),
        }
    }

    /// Per-sensor rate model, in sensor order.
    pub fn rates(&self) -> Result<RateModel, String> {
        self.sensors
            .iter()
            .map(|s| s.source.rate().map_err(|e| format!("stream {}: {e}", s.stream_id)))
            .collect::<Result<Vec<_>, _>>()
            .map(RateModel::new)
    }

    /// Ingress port numbering: sensors in file order starting at 1.
    pub fn sensor_descs(&self) -> Vec<SensorDesc> {
        self.sensors
            .iter()
            .enumerate()
            .map(|(i, s)| SensorDesc {
                stream: s.stream_id,
                ingress: IngressPort(i as u16 + 1),
                video_pids: s.source.video_pids().into_iter().collect(),
            })
            .collect()
    }

    /// Every problem with the scenario that can be found without running it.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            errs.push(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if self.edge.queue_capacity == 0 {
            errs.push("edge.queue_capacity must be at least 1".into());
        }
        if let Err(e) = self.table() {
            errs.push(format!("detection_table: {e}"));
        }

        let mut addrs: BTreeMap<SocketAddrV4, String> = BTreeMap::new();
        let mut claim = |addr: SocketAddrV4, what: String, errs: &mut Vec<String>| {
            // Port 0 asks for an ephemeral port and never collides.
            if addr.port() == 0 {
                return;
            }
            if let Some(prev) = addrs.insert(addr, what.clone()) {
                errs.push(format!("duplicate address {addr}: {prev} and {what}"));
            }
        };
        claim(self.edge.control_addr, "edge control".into(), &mut errs);

        let mut streams = BTreeSet::new();
        for s in &self.sensors {
            if !streams.insert(s.stream_id) {
                errs.push(format!("duplicate stream_id {}", s.stream_id));
            }
            claim(s.ingress_addr, format!("stream {} ingress", s.stream_id), &mut errs);
            claim(s.control_addr, format!("stream {} control", s.stream_id), &mut errs);
            if let Err(e) = s.source.validate() {
                errs.push(format!("stream {}: {e}", s.stream_id));
            } else if let Err(e) = s.source.rate() {
                errs.push(format!("stream {}: {e}", s.stream_id));
            }
        }

        let mut processes = BTreeSet::new();
        for p in &self.processes {
            if !processes.insert(p.process_id) {
                errs.push(format!("duplicate process_id {}", p.process_id));
            }
            claim(p.egress_addr, format!("process {} egress", p.process_id), &mut errs);
            if p.requirements.is_empty() {
                errs.push(format!("process {} has no requirements", p.process_id));
            }
            let mut seen = BTreeSet::new();
            for r in &p.requirements {
                if !seen.insert(r.stream_id) {
                    errs.push(format!("process {} lists stream {} twice", p.process_id, r.stream_id));
                }
                if !streams.contains(&r.stream_id) {
                    errs.push(format!(
                        "process {} requires unknown stream {}",
                        p.process_id, r.stream_id
                    ));
                }
            }
        }

        let mut last = 0.0;
        for (i, ev) in self.timeline.iter().enumerate() {
            if !(ev.at_s >= 0.0 && ev.at_s.is_finite()) {
                errs.push(format!("timeline[{i}]: at_s must be nonnegative, got {}", ev.at_s));
            } else if ev.at_s < last {
                errs.push(format!(
                    "timeline[{i}]: at_s {} is before the previous entry at {last}",
                    ev.at_s
                ));
            }
            last = last.max(ev.at_s);
            if let Some(p) = ev.action.process() {
                if !processes.contains(&p) {
                    errs.push(format!("timeline[{i}]: unknown process {p}"));
                }
            }
            if let Some(s) = ev.action.stream() {
                if !streams.contains(&s) {
                    errs.push(format!("timeline[{i}]: unknown stream {s}"));
                }
            }
            if let TimelineAction::SetDelta { delta, .. } = ev.action {
                if !(0.0..=1.0).contains(&delta) {
                    errs.push(format!("timeline[{i}]: delta {delta} outside [0, 1]"));
                }
            }
        }

        if errs.is_empty() {
            if let Err(rejections) = self.check() {
                errs.extend(rejections);
            }
        }
        errs
    }

    /// The reconciliation the run performs at start, computed without side
    /// effects.
    pub fn plan(&self) -> Result<(Plan, Vec<Rejection>), String> {
        let reconciler = Reconciler::new(
            self.sensor_descs(),
            self.rates()?,
            self.table()?,
            Arc::new(SharedPolicy::new(PolicyMap::new())),
        );
        let changes: Vec<ControlChange> = self
            .processes
            .iter()
            .filter(|p| p.start_registered)
            .map(|p| ControlChange::Register(p.registration(p.egress_addr)))
            .collect();
        Ok(reconciler.preview(&changes))
    }

    fn check(&self) -> Result<CheckReport, Vec<String>> {
        let (plan, rejected) = self.plan().map_err(|e| vec![e])?;
        if !rejected.is_empty() {
            return Err(rejected
                .iter()
                .map(|r| match r.process {
                    Some(p) => format!("process {p}: {}", r.reason),
                    None => r.reason.clone(),
                })
                .collect());
        }
        Ok(CheckReport::new(self, plan))
    }

    /// Validate and, if valid, compute the predicted control outcome.
    pub fn check_report(&self) -> Result<CheckReport, Vec<String>> {
        let errs = self.validate();
        if !errs.is_empty() {
            return Err(errs);
        }
        self.check()
    }
}

/// Output of a static check: Ω, Q_eff, Δ and predicted bandwidths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub processes: Vec<ProcessId>,
    pub streams: Vec<CheckStream>,
    pub bandwidth_full_bps: f64,
    pub sensor_egress_bps: f64,
    pub bandwidth_saved_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckStream {
    pub stream: StreamId,
    pub full_bps: f64,
    pub keep: Option<f64>,
    pub predicted_bps: Option<f64>,
    pub omega: BTreeMap<ProcessId, f64>,
    pub delta: BTreeMap<ProcessId, f64>,
}

impl CheckReport {
    pub(crate) fn new(scenario: &Scenario, plan: Plan) -> Self {
        let rates = scenario.rates().expect("validated");
        let streams: Vec<CheckStream> = scenario
            .sensors
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let rate = rates.streams[i];
                let q = plan.solution.q_eff[i];
                let omega = plan
                    .processes
                    .iter()
                    .enumerate()
                    .filter_map(|(j, p)| plan.solution.omega.get(i, j).map(|q| (*p, q.differential_keep())))
                    .collect();
                let delta = plan
                    .processes
                    .iter()
                    .filter_map(|p| {
                        let entry = plan.control.map.entry(s.stream_id)?;
                        entry.delta((*p).into()).map(|d| (*p, d))
                    })
                    .collect();
                CheckStream {
                    stream: s.stream_id,
                    full_bps: rate.full(),
                    keep: q.map(|q| q.differential_keep()),
                    predicted_bps: q.map(|q| rate.at(q)),
                    omega,
                    delta,
                }
            })
            .collect();
        let used: f64 = streams.iter().filter_map(|s| s.predicted_bps.map(|_| s.full_bps)).sum();
        let sensor_egress_bps = plan.solution.sensor_egress_bps;
        CheckReport {
            processes: plan.processes.clone(),
            bandwidth_full_bps: bandwidth_full(&rates, plan.processes.len().max(1)),
            sensor_egress_bps,
            bandwidth_saved_bps: used - sensor_egress_bps,
            streams,
        }
    }
}
