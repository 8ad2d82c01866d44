//! Building the run report from what each role hands back.

use std::collections::BTreeMap;

use super::edge::ControlLog;
use super::sensor::SensorOutcome;
use super::sink::SinkData;
use crate::control::Reconciler;
use crate::dpi::{FrameClass, TS_PACKET_SIZE};
use crate::edge::EdgeEngine;
use crate::ids::{ProcessId, StreamId};
use crate::metrics::{
    decodable_ratio, steady_bitrate, ControlReport, CpuTally, EdgeReport, EgressReport, FrameLedger, Predictions,
    Proxies, Report, SensorReport, StreamPrediction, TimelineEntry,
};
use crate::scenario::{CheckReport, Scenario};
use crate::sensor::{StreamSource, SyntheticSpec};

pub(crate) struct RunState<'a> {
    pub scenario: &'a Scenario,
    pub sensors: Vec<SensorOutcome>,
    pub engines: Vec<EdgeEngine>,
    pub sinks: BTreeMap<ProcessId, SinkData>,
    pub reconciler: &'a Reconciler,
    pub control: ControlLog,
    pub timeline: Vec<TimelineEntry>,
}

/// Decodable ratio of the frames of one synthetic stream a sink received,
/// from its first reference frame up to, but excluding, its last frame.
fn sink_ratio(spec: &SyntheticSpec, frames: &BTreeMap<u32, u32>) -> Option<f64> {
    let first = frames
        .keys()
        .map(|&f| u64::from(f))
        .find(|&f| spec.class_of_frame(f) == FrameClass::Reference)?;
    let last = u64::from(*frames.keys().next_back()?);
    if last <= first {
        return None;
    }
    let mut ledger = FrameLedger::new();
    ledger.expect_synthetic(spec, first, last - 1);
    for (&f, &n) in frames {
        if u64::from(f) < last {
            for _ in 0..n {
                ledger.receive(u64::from(f));
            }
        }
    }
    decodable_ratio(&ledger)
}

pub(crate) fn assemble(state: RunState<'_>) -> Report {
    let scenario = state.scenario;
    let (plan, _) = state.reconciler.preview(&[]);
    let check = CheckReport::new(scenario, plan);
    let map = state.reconciler.policy().snapshot();
    let rates = scenario.rates().unwrap_or_default();

    let specs: BTreeMap<StreamId, SyntheticSpec> = scenario
        .sensors
        .iter()
        .filter_map(|s| match scenario.effective_source(s) {
            StreamSource::Synthetic(spec) => Some((s.stream_id, spec)),
            _ => None,
        })
        .collect();

    let sensors: Vec<SensorReport> = state
        .sensors
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let c = o.control.counters();
            let q = o.control.quality().q_eff();
            let diff_in = c.packets_in[FrameClass::Differential];
            SensorReport {
                stream: o.control.stream(),
                paused: o.paused,
                keep: q.differential_keep(),
                notifications: o.notifications,
                packets_in: c.packets_in,
                packets_out: c.packets_out,
                suppressed: c.suppressed(),
                bytes_out: c.bytes_out,
                datagrams_out: c.datagrams_out,
                realized_keep: (diff_in > 0).then(|| c.packets_out[FrameClass::Differential] as f64 / diff_in as f64),
                bitrate_windows_bps: c.rate.bitrates(),
                measured_bps: steady_bitrate(&c.rate),
                measured_offered_bps: steady_bitrate(&c.rate_in),
                predicted_bps: (!o.paused).then(|| rates.streams.get(i).map(|r| r.at(q))).flatten(),
            }
        })
        .collect();

    let edges: Vec<EdgeReport> = state
        .engines
        .iter()
        .map(|e| {
            let c = e.ingress_counters();
            EdgeReport {
                stream: e.stream(),
                ingress: e.ingress(),
                datagrams_in: c.datagrams_in,
                packets_in: c.packets_in,
                bytes_in: c.bytes_in,
                orphaned: c.orphaned,
                unknown_class: c.unknown_class,
                continuity_gaps: c.continuity_gaps,
                framing_errors: c.framing_errors,
                bitrate_windows_bps: c.rate.bitrates(),
                measured_bps: steady_bitrate(&c.rate),
                cpu: e.cpu_tally(),
            }
        })
        .collect();

    // How many streams feed each egress; a sink fed by one stream owns all it received.
    let mut feeds: BTreeMap<ProcessId, usize> = BTreeMap::new();
    for e in &state.engines {
        for c in e.egress_counters() {
            *feeds.entry(ProcessId(c.egress.0)).or_default() += 1;
        }
    }

    let mut egresses = Vec::new();
    let mut ratios = Vec::new();
    for e in &state.engines {
        for c in e.egress_counters() {
            let process = ProcessId(c.egress.0);
            let data = state.sinks.get(&process);
            let received_packets = match data {
                Some(d) if feeds[&process] == 1 => d.packets,
                Some(d) => d.tagged(c.stream),
                None => 0,
            };
            let decodable = match (specs.get(&c.stream), data.and_then(|d| d.frames.get(&c.stream))) {
                (Some(spec), Some(frames)) => sink_ratio(spec, frames),
                _ => None,
            };
            ratios.extend(decodable);
            egresses.push(EgressReport {
                stream: c.stream,
                egress: c.egress,
                process,
                configured_delta: map.entry(c.stream).and_then(|en| en.delta(c.egress)),
                realized_suppression: c.realized_suppression(),
                offered: c.offered,
                forwarded: c.forwarded,
                policy_suppressed: c.policy_suppressed,
                overflow_dropped: c.overflow_dropped,
                bytes_out: c.bytes_out,
                datagrams_out: c.datagrams_out,
                conserved: c.is_conserved(),
                received_packets,
                received_bytes: received_packets * TS_PACKET_SIZE as u64,
                decodable_ratio: decodable,
            });
        }
    }

    let mut tally = CpuTally::default();
    for e in &state.engines {
        tally.merge(&e.cpu_tally());
    }

    let measured_saved: Vec<f64> = sensors
        .iter()
        .filter_map(|s| Some(s.measured_offered_bps? - s.measured_bps?))
        .collect();

    let predictions = Predictions {
        processes: check.processes.len(),
        bandwidth_full_bps: check.bandwidth_full_bps,
        sensor_egress_bps: check.sensor_egress_bps,
        bandwidth_saved_bps: check.bandwidth_saved_bps,
        bandwidth_saved_measured_bps: (!measured_saved.is_empty()).then(|| measured_saved.iter().sum()),
        streams: check
            .streams
            .into_iter()
            .map(|s| StreamPrediction {
                stream: s.stream,
                keep: s.keep,
                full_bps: s.full_bps,
                predicted_bps: s.predicted_bps,
                omega: s.omega,
                delta: s.delta,
            })
            .collect(),
    };

    Report {
        config: serde_json::to_value(scenario).unwrap_or_default(),
        sensors,
        edges,
        egresses,
        proxies: Proxies {
            cpu_constants: scenario.cpu,
            cpu_tally: tally,
            cpu_cost: scenario.cpu.cost(&tally),
            decodable_ratio_mean: (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64),
        },
        predictions,
        control: ControlReport {
            policy_version: map.version(),
            reconciles: state.control.reconciles,
            rejected: state.control.rejected,
            unacked: state.control.unacked,
            timeline: state.timeline,
        },
    }
}
