//! The same loop as a live run, on a virtual clock and without sockets.
//!
//! Every role runs in one thread in timestamp order, so a scenario and seed
//! always produce the same report.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use bytes::Bytes;

use super::assemble::{assemble, RunState};
use super::edge::{operator_changes, ControlLog};
use super::sensor::SensorOutcome;
use super::sink::{sink_register, SinkData};
use super::timeline::{ProcessBook, Step};
use super::RunError;
use crate::control::{ControlChange, ReconcileOutcome, Reconciler};
use crate::dpi::TS_PACKET_SIZE;
use crate::edge::{Backpressure, EdgeEngine, EgressSink, PolicyMap, SharedPolicy};
use crate::ids::{EgressId, IngressPort, ProcessId, StreamId};
use crate::metrics::{Report, TimelineEntry};
use crate::scenario::Scenario;
use crate::sensor::{pack_datagrams, FrameSource, SensorControl};

struct SimSink(Arc<Mutex<SinkData>>);

impl EgressSink for SimSink {
    fn try_send(&mut self, datagram: Bytes) -> Result<(), Backpressure> {
        self.0.lock().unwrap().receive(&datagram);
        Ok(())
    }
}

struct SimSensor {
    control: SensorControl,
    source: Box<dyn FrameSource>,
    interval: f64,
    frames: u64,
    paused: bool,
    notifications: u64,
}

impl SimSensor {
    fn next_at(&self) -> f64 {
        self.frames as f64 * self.interval
    }
}

fn nanos(t: f64) -> Duration {
    Duration::from_nanos((t * 1e9).round() as u64)
}

/// Run `scenario` on a virtual clock.
pub fn simulate(scenario: &Scenario) -> Result<Report, RunError> {
    let errs = scenario.validate();
    if !errs.is_empty() {
        return Err(RunError::Invalid(errs));
    }
    let rates = scenario.rates().map_err(|e| RunError::Invalid(vec![e]))?;
    let table = scenario.table().map_err(|e| RunError::Invalid(vec![e]))?;
    let policy = Arc::new(SharedPolicy::new(PolicyMap::new()));
    let mut reconciler = Reconciler::new(scenario.sensor_descs(), rates, table, policy.clone());

    let sinks: BTreeMap<ProcessId, Arc<Mutex<SinkData>>> = scenario
        .processes
        .iter()
        .map(|p| (p.process_id, Arc::default()))
        .collect();
    let base = Instant::now();
    let mut engines = Vec::new();
    let mut sensors = Vec::new();
    for (i, s) in scenario.sensors.iter().enumerate() {
        let registry = sinks.clone();
        let factory = move |_: StreamId, egress: EgressId| {
            registry
                .get(&ProcessId(egress.0))
                .map(|d| Box::new(SimSink(d.clone())) as Box<dyn EgressSink>)
        };
        engines.push(EdgeEngine::new(IngressPort(i as u16 + 1), s.stream_id, policy.clone(), factory).with_start(base));
        let source = scenario.effective_source(s);
        sensors.push(SimSensor {
            control: SensorControl::new(s.stream_id, source.video_pids()),
            source: source
                .open(s.stream_id)
                .map_err(|e| RunError::Invalid(vec![e.to_string()]))?,
            interval: 1.0 / source.fps(),
            frames: 0,
            paused: true,
            notifications: 0,
        });
    }

    let mut log = ControlLog::default();
    let mut book = ProcessBook::new(scenario);
    let egress_of: BTreeMap<ProcessId, _> = scenario
        .processes
        .iter()
        .map(|p| (p.process_id, p.egress_addr))
        .collect();
    let apply = |steps: Vec<Step>, reconciler: &mut Reconciler, sensors: &mut [SimSensor], log: &mut ControlLog| {
        for step in steps {
            let changes = match step {
                Step::Sink(p, cmd) => vec![ControlChange::from(&sink_register(p, egress_of[&p], &cmd))],
                Step::Operator(m) => operator_changes(&m),
            };
            let outcome = reconciler.reconcile(&changes);
            after_commit(&outcome, sensors, log);
        }
    };

    let initial = reconciler.reconcile(&[]);
    after_commit(&initial, &mut sensors, &mut log);
    let steps = book.initial(scenario);
    apply(steps, &mut reconciler, &mut sensors, &mut log);

    let mut timeline = scenario.timeline.iter().peekable();
    let mut applied = Vec::new();
    while let Some((idx, t)) = sensors
        .iter()
        .enumerate()
        .map(|(i, s)| (i, s.next_at()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
    {
        if let Some(ev) = timeline.next_if(|ev| ev.at_s <= t && ev.at_s < scenario.duration_s) {
            let steps = book.apply(&ev.action);
            apply(steps, &mut reconciler, &mut sensors, &mut log);
            applied.push(TimelineEntry {
                at_s: ev.at_s,
                action: serde_json::to_string(&ev.action).unwrap_or_default(),
            });
            continue;
        }
        if t >= scenario.duration_s {
            break;
        }
        let sensor = &mut sensors[idx];
        sensor.frames += 1;
        if sensor.paused {
            continue;
        }
        let Some(units) = sensor.source.next_frame() else {
            sensor.interval = f64::INFINITY;
            continue;
        };
        let kept = match sensor.control.sensor_control(&units) {
            Ok(k) => k,
            Err(e) => {
                log::warn!("stream {}: unparseable source unit: {e}", sensor.control.stream());
                continue;
            }
        };
        let counters = sensor.control.counters_mut();
        counters.rate_in.record(nanos(t), (units.len() * TS_PACKET_SIZE) as u64);
        counters.rate.record(nanos(t), (kept.len() * TS_PACKET_SIZE) as u64);
        let datagrams = pack_datagrams(&kept);
        let n = datagrams.len().max(1) as f64;
        let engine = &mut engines[idx];
        for (k, d) in datagrams.into_iter().enumerate() {
            let at = base + nanos(t + sensor.interval * k as f64 / n);
            sensor.control.counters_mut().datagrams_out += 1;
            engine.poll_timers(at);
            if let Err(e) = engine.process_datagram(d, at) {
                log::debug!("stream {}: dropped datagram: {e}", engine.stream());
            }
        }
    }
    for e in &mut engines {
        e.flush();
    }

    let sensors = sensors
        .into_iter()
        .map(|s| SensorOutcome {
            control: s.control,
            paused: s.paused,
            notifications: s.notifications,
            send_errors: 0,
        })
        .collect();
    let sink_data = sinks.iter().map(|(p, d)| (*p, d.lock().unwrap().clone())).collect();
    Ok(assemble(RunState {
        scenario,
        sensors,
        engines,
        sinks: sink_data,
        reconciler: &reconciler,
        control: log,
        timeline: applied,
    }))
}

fn after_commit(outcome: &ReconcileOutcome, sensors: &mut [SimSensor], log: &mut ControlLog) {
    log.reconciles += 1;
    for r in &outcome.rejected {
        let who = r.process.map(|p| format!("process {p}: ")).unwrap_or_default();
        log.rejected.push(format!("{who}{}", r.reason));
    }
    for s in sensors.iter_mut() {
        let stream = s.control.stream();
        if outcome.paused.contains(&stream) {
            s.paused = true;
        }
        if outcome.resumed.contains(&stream) {
            s.paused = false;
        }
        for n in outcome.notifications.iter().filter(|n| n.stream == stream) {
            if s.control.handle_quality_notify(n).is_ok() {
                s.notifications += 1;
            }
        }
    }
}
