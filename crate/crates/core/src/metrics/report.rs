//! The run report (one JSON document) and CSV plot data.
//!
//! The schema is described in `docs/report.md`.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;

use super::counters::{ClassCounts, WindowedBytes};
use super::cpu::{CpuCost, CpuProxy, CpuTally};
use crate::ids::{EgressId, IngressPort, ProcessId, StreamId};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub config: serde_json::Value,
    pub sensors: Vec<SensorReport>,
    pub edges: Vec<EdgeReport>,
    pub egresses: Vec<EgressReport>,
    pub proxies: Proxies,
    pub predictions: Predictions,
    pub control: ControlReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensorReport {
    pub stream: StreamId,
    pub paused: bool,
    /// Keep fraction in force when the run ended.
    pub keep: f64,
    pub notifications: u64,
    pub packets_in: ClassCounts,
    pub packets_out: ClassCounts,
    pub suppressed: u64,
    pub bytes_out: u64,
    pub datagrams_out: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub realized_keep: Option<f64>,
    pub bitrate_windows_bps: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measured_bps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measured_offered_bps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_bps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeReport {
    pub stream: StreamId,
    pub ingress: IngressPort,
    pub datagrams_in: u64,
    pub packets_in: ClassCounts,
    pub bytes_in: u64,
    pub orphaned: u64,
    pub unknown_class: u64,
    pub continuity_gaps: u64,
    pub framing_errors: u64,
    pub bitrate_windows_bps: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measured_bps: Option<f64>,
    pub cpu: CpuTally,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EgressReport {
    pub stream: StreamId,
    pub egress: EgressId,
    pub process: ProcessId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub configured_delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub realized_suppression: Option<f64>,
    pub offered: ClassCounts,
    pub forwarded: ClassCounts,
    pub policy_suppressed: u64,
    pub overflow_dropped: u64,
    pub bytes_out: u64,
    pub datagrams_out: u64,
    pub conserved: bool,
    pub received_packets: u64,
    pub received_bytes: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decodable_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Proxies {
    pub cpu_constants: CpuProxy,
    pub cpu_tally: CpuTally,
    pub cpu_cost: CpuCost,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decodable_ratio_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamPrediction {
    pub stream: StreamId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keep: Option<f64>,
    pub full_bps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_bps: Option<f64>,
    /// Required keep per process.
    pub omega: BTreeMap<ProcessId, f64>,
    /// Edge suppression per process.
    pub delta: BTreeMap<ProcessId, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Predictions {
    pub processes: usize,
    pub bandwidth_full_bps: f64,
    pub sensor_egress_bps: f64,
    pub bandwidth_saved_bps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth_saved_measured_bps: Option<f64>,
    pub streams: Vec<StreamPrediction>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ControlReport {
    pub policy_version: u64,
    pub reconciles: u64,
    pub rejected: Vec<String>,
    /// Control messages that went unacknowledged after all retries.
    pub unacked: Vec<String>,
    pub timeline: Vec<TimelineEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimelineEntry {
    pub at_s: f64,
    pub action: String,
}

/// Mean rate over the windows that were neither ramp-up nor cut short.
pub fn steady_bitrate(w: &WindowedBytes) -> Option<f64> {
    let n = w.buckets.len();
    if n >= 3 {
        w.mean_bitrate(1, n - 1)
    } else {
        w.mean_bitrate(0, n)
    }
}

/// Write the report as pretty-printed JSON.
pub fn emit_report(report: &Report, path: &Path) -> io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, report)?;
    f.write_all(b"\n")?;
    f.flush()
}

/// One point of a plotted series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotRow {
    pub x: f64,
    pub series: String,
    pub value: f64,
}

impl PlotRow {
    pub fn new(x: f64, series: impl Into<String>, value: f64) -> Self {
        PlotRow {
            x,
            series: series.into(),
            value,
        }
    }
}

/// CSV with an `x,series,value` header.
pub fn write_plot_csv(rows: &[PlotRow], out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "x,series,value")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.x, r.series, r.value)?;
    }
    Ok(())
}
