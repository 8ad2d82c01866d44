//! The edge's single reconciler: registrations in, policy versions and
//! sensor notifications out.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddrV4;
use std::sync::Arc;

use serde::Serialize;

use super::codec::{Fixed16, QualityNotify, RegisterAction, SinkRegister};
use crate::edge::{apply_policy_update, edge_control, EdgeControlOutput, PolicyUpdate, SensorDesc, SharedPolicy};
use crate::ids::{EgressId, ProcessId, StreamId};
use crate::qoc::{solve_min_bandwidth, DetectionTable, RateModel, Requirement, Solution};

/// A computation process and what it needs from each stream it uses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Registration {
    pub process: ProcessId,
    pub egress_addr: SocketAddrV4,
    pub requirements: BTreeMap<StreamId, Requirement>,
}

impl Registration {
    pub fn egress(&self) -> EgressId {
        self.process.into()
    }
}

impl From<&SinkRegister> for Registration {
    fn from(m: &SinkRegister) -> Self {
        Registration {
            process: m.process,
            egress_addr: m.egress,
            requirements: m
                .requirements
                .iter()
                .map(|r| (r.stream, Requirement::new(wire_threshold(r.threshold), r.strategy)))
                .collect(),
        }
    }
}

/// Thresholds travel as 1/65535 steps; they are read back at 1e-4 resolution
/// so that a table value such as 0.99 is not turned into 0.990005 and
/// judged infeasible.
pub fn wire_threshold(t: Fixed16) -> f64 {
    (t.to_f64() * 1e4).round() / 1e4
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlChange {
    Register(Registration),
    Deregister(ProcessId),
    /// Operator override of one egress's suppression, kept across reconciles.
    /// `None` clears it.
    OverrideDelta {
        stream: StreamId,
        egress: EgressId,
        delta: Option<f64>,
    },
    /// Drop every operator override on a stream.
    ClearOverrides(StreamId),
}

impl From<&SinkRegister> for ControlChange {
    fn from(m: &SinkRegister) -> Self {
        match m.action {
            RegisterAction::Register => ControlChange::Register(m.into()),
            RegisterAction::Deregister => ControlChange::Deregister(m.process),
        }
    }
}

/// A change that was not applied, and why.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub process: Option<ProcessId>,
    pub reason: String,
}

/// What a set of registrations implies, before anything is committed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plan {
    pub processes: Vec<ProcessId>,
    pub solution: Solution,
    pub control: EdgeControlOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconcileOutcome {
    pub version: u64,
    pub notifications: Vec<QualityNotify>,
    pub paused: Vec<StreamId>,
    pub resumed: Vec<StreamId>,
    pub rejected: Vec<Rejection>,
    pub plan: Plan,
}

/// Operator suppression overrides per (stream, egress).
type Overrides = BTreeMap<(StreamId, EgressId), f64>;

/// Serializes all control-plane changes into policy versions.
pub struct Reconciler {
    sensors: Vec<SensorDesc>,
    rates: RateModel,
    table: DetectionTable,
    registrations: BTreeMap<ProcessId, Registration>,
    overrides: Overrides,
    policy: Arc<SharedPolicy>,
    notified: BTreeMap<StreamId, Fixed16>,
    paused: BTreeSet<StreamId>,
}

impl Reconciler {
    /// `rates` follows `sensors`. Every sensor starts paused at full quality.
    pub fn new(sensors: Vec<SensorDesc>, rates: RateModel, table: DetectionTable, policy: Arc<SharedPolicy>) -> Self {
        assert_eq!(sensors.len(), rates.len(), "one rate per sensor");
        let notified = sensors.iter().map(|s| (s.stream, Fixed16::ONE)).collect();
        let paused = sensors.iter().map(|s| s.stream).collect();
        Reconciler {
            sensors,
            rates,
            table,
            registrations: BTreeMap::new(),
            overrides: BTreeMap::new(),
            policy,
            notified,
            paused,
        }
    }

    pub fn policy(&self) -> &Arc<SharedPolicy> {
        &self.policy
    }

    pub fn sensors(&self) -> &[SensorDesc] {
        &self.sensors
    }

    pub fn registrations(&self) -> &BTreeMap<ProcessId, Registration> {
        &self.registrations
    }

    pub fn is_paused(&self, stream: StreamId) -> bool {
        self.paused.contains(&stream)
    }

    /// Last quality notified to a stream's sensor.
    pub fn notified(&self, stream: StreamId) -> Option<Fixed16> {
        self.notified.get(&stream).copied()
    }

    fn check(&self, reg: &Registration, regs: &BTreeMap<ProcessId, Registration>) -> Result<(), String> {
        if reg.requirements.is_empty() {
            return Err("registration lists no streams".into());
        }
        for (stream, req) in &reg.requirements {
            if !self.sensors.iter().any(|s| s.stream == *stream) {
                return Err(format!("stream {stream} is not served by this edge"));
            }
            req.quality(&self.table).map_err(|e| format!("stream {stream}: {e}"))?;
        }
        if let Some(other) = regs
            .values()
            .find(|r| r.process != reg.process && r.egress_addr == reg.egress_addr && reg.egress_addr.port() != 0)
        {
            return Err(format!(
                "egress address {} already used by process {}",
                reg.egress_addr, other.process
            ));
        }
        Ok(())
    }

    fn apply_changes(
        &self,
        changes: &[ControlChange],
    ) -> (BTreeMap<ProcessId, Registration>, Overrides, Vec<Rejection>) {
        let mut regs = self.registrations.clone();
        let mut overrides = self.overrides.clone();
        let mut rejected = Vec::new();
        for change in changes {
            match change {
                ControlChange::Register(reg) => match self.check(reg, &regs) {
                    Ok(()) => {
                        regs.insert(reg.process, reg.clone());
                    }
                    Err(reason) => rejected.push(Rejection {
                        process: Some(reg.process),
                        reason,
                    }),
                },
                ControlChange::Deregister(p) => {
                    regs.remove(p);
                    overrides.retain(|(_, e), _| *e != EgressId::from(*p));
                }
                ControlChange::OverrideDelta { stream, egress, delta } => match delta {
                    Some(d) if !(0.0..=1.0).contains(d) => rejected.push(Rejection {
                        process: None,
                        reason: format!("delta {d} outside [0, 1]"),
                    }),
                    Some(d) => {
                        overrides.insert((*stream, *egress), *d);
                    }
                    None => {
                        overrides.remove(&(*stream, *egress));
                    }
                },
                ControlChange::ClearOverrides(stream) => {
                    overrides.retain(|(s, _), _| s != stream);
                }
            }
        }
        (regs, overrides, rejected)
    }

    fn plan_for(&self, regs: &BTreeMap<ProcessId, Registration>, overrides: &Overrides) -> Plan {
        let processes: Vec<ProcessId> = regs.keys().copied().collect();
        let streams: Vec<StreamId> = self.sensors.iter().map(|s| s.stream).collect();
        let requirements: Vec<Vec<Option<Requirement>>> = streams
            .iter()
            .map(|s| regs.values().map(|r| r.requirements.get(s).copied()).collect())
            .collect();
        let solution = solve_min_bandwidth(&streams, &requirements, &self.table, &self.rates)
            .expect("registrations are validated before planning");
        let mut control = edge_control(&self.sensors, &processes, &solution.omega, 0);

        let updates: Vec<PolicyUpdate> = overrides
            .iter()
            .filter(|((s, e), _)| control.map.entry(*s).is_some_and(|entry| entry.delta(*e).is_some()))
            .map(|(&(stream, egress), &delta)| PolicyUpdate::SetDelta { stream, egress, delta })
            .collect();
        if !updates.is_empty() {
            control.map = apply_policy_update(&control.map, &updates)
                .expect("overrides are range-checked and target existing egresses");
        }
        Plan {
            processes,
            solution,
            control,
        }
    }

    /// What the current registrations plus `changes` would produce. Commits nothing.
    pub fn preview(&self, changes: &[ControlChange]) -> (Plan, Vec<Rejection>) {
        let (regs, overrides, rejected) = self.apply_changes(changes);
        (self.plan_for(&regs, &overrides), rejected)
    }

    /// Apply `changes`, publish exactly one new policy version and work out
    /// which sensors must be notified, paused or resumed.
    pub fn reconcile(&mut self, changes: &[ControlChange]) -> ReconcileOutcome {
        let (regs, overrides, rejected) = self.apply_changes(changes);
        let plan = self.plan_for(&regs, &overrides);
        self.registrations = regs;
        self.overrides = overrides;
        let version = self.policy.publish(plan.control.map.clone());

        let mut notifications = Vec::new();
        let mut paused = Vec::new();
        let mut resumed = Vec::new();
        for sensor in &self.sensors {
            let stream = sensor.stream;
            match plan.control.q_eff.get(&stream) {
                None => {
                    if self.paused.insert(stream) {
                        paused.push(stream);
                    }
                }
                Some(q) => {
                    if self.paused.remove(&stream) {
                        resumed.push(stream);
                    }
                    let keep = Fixed16::from_f64(q.differential_keep());
                    if self.notified.insert(stream, keep) != Some(keep) {
                        notifications.push(QualityNotify { stream, keep });
                    }
                }
            }
        }
        ReconcileOutcome {
            version,
            notifications,
            paused,
            resumed,
            rejected,
            plan,
        }
    }
}
