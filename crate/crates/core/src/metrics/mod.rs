//! Measurement: counters, quality and CPU proxies, reports.

mod counters;
mod cpu;
mod curves;
mod decodability;
mod report;

pub use counters::{ClassCounts, EgressCounters, IngressCounters, SensorCounters, WindowedBytes};
pub use cpu::{CpuCost, CpuProxy, CpuTally};
pub use curves::{
    cpu_rows, cpu_sweep, decodability_curve, decodability_rows, detection_rows, linear_fit, CpuSweepPoint,
};
pub use decodability::{
    compare_strategies, decodable_ratio, ratio_after_drops, synthetic_frames, FrameLedger, FrameRecord,
    StrategyComparison,
};
pub use report::{
    emit_report, steady_bitrate, write_plot_csv, ControlReport, EdgeReport, EgressReport, PlotRow, Predictions,
    Proxies, Report, SensorReport, StreamPrediction, TimelineEntry,
};
