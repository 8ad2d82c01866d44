//! Data for the quality, detection and CPU-cost curves.

use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::Bytes;
use serde::Serialize;

use super::cpu::{CpuCost, CpuProxy, CpuTally};
use super::decodability::{compare_strategies, StrategyComparison};
use super::report::PlotRow;
use crate::edge::{Backpressure, EdgeEngine, EgressPolicy, EgressSink, PolicyMap, PolicyUpdate, SharedPolicy};
use crate::ids::{EgressId, IngressPort, StreamId};
use crate::qoc::{DetectionTable, Strategy};
use crate::sensor::{generate_synthetic, pack_datagrams, SyntheticSpec};

/// Decodable ratio of both dropping strategies at each loss fraction.
pub fn decodability_curve(spec: &SyntheticSpec, gops: u32, losses: &[f64], seeds: &[u64]) -> Vec<StrategyComparison> {
    losses
        .iter()
        .map(|&loss| compare_strategies(spec, gops, loss, seeds))
        .collect()
}

pub fn decodability_rows(curve: &[StrategyComparison]) -> Vec<PlotRow> {
    curve
        .iter()
        .flat_map(|c| {
            [
                PlotRow::new(c.loss, "uniform", c.uniform),
                PlotRow::new(c.loss, "selective", c.selective),
            ]
        })
        .collect()
}

/// Detection rate of both strategies at each loss percentage.
pub fn detection_rows(table: &DetectionTable, losses_percent: &[f64]) -> Vec<PlotRow> {
    losses_percent
        .iter()
        .flat_map(|&l| {
            [
                PlotRow::new(l, "uniform", table.detection(l, Strategy::Uniform)),
                PlotRow::new(l, "differential", table.detection(l, Strategy::Differential)),
            ]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CpuSweepPoint {
    pub delta: f64,
    pub suppressed: u64,
    pub tally: CpuTally,
    pub cost: CpuCost,
}

struct Discard;

impl EgressSink for Discard {
    fn try_send(&mut self, _: Bytes) -> Result<(), Backpressure> {
        Ok(())
    }
}

/// Edge proxy cost of the same ingress traffic with every egress at each delta.
pub fn cpu_sweep(
    spec: &SyntheticSpec,
    frames: u64,
    egresses: u16,
    deltas: &[f64],
    proxy: &CpuProxy,
) -> Vec<CpuSweepPoint> {
    let stream = StreamId(1);
    let datagrams = pack_datagrams(&generate_synthetic(stream, spec, frames));
    deltas
        .iter()
        .map(|&delta| {
            let policy = Arc::new(SharedPolicy::new(PolicyMap::new()));
            policy
                .commit(&[
                    PolicyUpdate::Upsert {
                        ingress: IngressPort(1),
                        stream,
                        egresses: (0..egresses).map(|e| EgressPolicy::new(EgressId(e), delta)).collect(),
                    },
                    PolicyUpdate::SetVideoPids {
                        stream,
                        pids: [spec.video_pid].into(),
                    },
                ])
                .expect("fresh map accepts an upsert");
            let mut engine = EdgeEngine::new(IngressPort(1), stream, policy, |_: StreamId, _: EgressId| {
                Some(Box::new(Discard) as Box<dyn EgressSink>)
            });
            let start = Instant::now();
            for (i, d) in datagrams.iter().enumerate() {
                engine
                    .process_datagram(d.clone(), start + Duration::from_micros(i as u64))
                    .expect("synthetic datagrams are well formed");
            }
            engine.flush();
            let suppressed = engine.egress_counters().iter().map(|c| c.policy_suppressed).sum();
            let tally = engine.cpu_tally();
            CpuSweepPoint {
                delta,
                suppressed,
                tally,
                cost: proxy.cost(&tally),
            }
        })
        .collect()
}

pub fn cpu_rows(sweep: &[CpuSweepPoint]) -> Vec<PlotRow> {
    sweep
        .iter()
        .flat_map(|p| {
            [
                PlotRow::new(p.delta, "total", p.cost.total),
                PlotRow::new(p.delta, "clone", p.cost.clone),
                PlotRow::new(p.delta, "suppressed", p.suppressed as f64),
            ]
        })
        .collect()
}

/// Least-squares line through `(x, y)`: (slope, intercept, max |residual|).
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = points
        .iter()
        .map(|p| (p.1 - (slope * p.0 + intercept)).abs())
        .fold(0.0, f64::max);
    (slope, intercept, residual)
}
