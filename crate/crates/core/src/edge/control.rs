//! Building the replication policy from per-process quality requirements.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::policy::{map_from_parts, EgressPolicy, PolicyEntry, PolicyMap};
use crate::ids::{IngressPort, ProcessId, StreamId};
use crate::qoc::{residual_suppression, QualityMatrix, StreamQuality};

/// A sensor stream as the edge sees it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensorDesc {
    pub stream: StreamId,
    pub ingress: IngressPort,
    pub video_pids: BTreeSet<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeControlOutput {
    pub map: PolicyMap,
    /// Quality each served stream's sensor must transmit at.
    pub q_eff: BTreeMap<StreamId, StreamQuality>,
    /// Edge suppression per (stream, process) for every used pair.
    pub delta: BTreeMap<(StreamId, ProcessId), f64>,
    /// Streams no process uses; they are left out of the map.
    pub unused: Vec<StreamId>,
}

/// Compute interface lists, effective qualities and suppression factors.
///
/// `omega` rows follow `sensors`, columns follow `processes`. The returned map
/// carries `previous_version + 1`.
pub fn edge_control(
    sensors: &[SensorDesc],
    processes: &[ProcessId],
    omega: &QualityMatrix,
    previous_version: u64,
) -> EdgeControlOutput {
    assert_eq!(omega.streams().len(), sensors.len(), "omega rows follow sensors");
    assert!(
        omega.process_count() <= processes.len(),
        "omega columns follow processes"
    );

    let mut entries = Vec::new();
    let mut video_pids = BTreeMap::new();
    let mut q_eff = BTreeMap::new();
    let mut delta = BTreeMap::new();
    let mut unused = Vec::new();

    for (i, sensor) in sensors.iter().enumerate() {
        let interfaces: Vec<(ProcessId, StreamQuality)> = omega
            .row(i)
            .iter()
            .enumerate()
            .filter_map(|(j, q)| q.map(|q| (processes[j], q)))
            .collect();
        let Ok(eff) = omega.effective(i) else {
            unused.push(sensor.stream);
            continue;
        };

        let egresses = interfaces
            .iter()
            .map(|&(p, need)| {
                let d = residual_suppression(eff, need);
                delta.insert((sensor.stream, p), d);
                EgressPolicy::new(p.into(), d)
            })
            .collect();
        entries.push(PolicyEntry {
            ingress: sensor.ingress,
            stream: sensor.stream,
            egresses,
        });
        video_pids.insert(sensor.stream, sensor.video_pids.clone());
        q_eff.insert(sensor.stream, eff);
    }

    EdgeControlOutput {
        map: map_from_parts(entries, video_pids, previous_version + 1),
        q_eff,
        delta,
        unused,
    }
}
