//! Turning per-process detection thresholds into sensor qualities and edge
//! suppression factors.

use serde::{Deserialize, Serialize};

use super::{DetectionTable, QocError, QualityMatrix, RateModel, Strategy, StreamQuality};
use crate::ids::StreamId;

/// A process's detection-rate floor for one stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Requirement {
    pub threshold: f64,
    pub strategy: Strategy,
}

impl Requirement {
    pub fn new(threshold: f64, strategy: Strategy) -> Self {
        Requirement { threshold, strategy }
    }

    /// Retention needed to keep detection at or above the threshold.
    ///
    /// The tolerated loss is applied to differential packets only, so the loss
    /// over the whole stream never exceeds what the table was measured at.
    pub fn quality(&self, table: &DetectionTable) -> Result<StreamQuality, QocError> {
        let loss = table.max_tolerable_loss(self.threshold, self.strategy)?;
        StreamQuality::new((1.0 - loss / 100.0).clamp(0.0, 1.0))
    }
}

/// Edge-side suppression for an egress that needs `need` from a stream
/// arriving at `effective`. Relative to the arriving stream.
pub fn residual_suppression(effective: StreamQuality, need: StreamQuality) -> f64 {
    let eff = effective.differential_keep();
    if eff <= 0.0 {
        return 0.0;
    }
    (1.0 - need.differential_keep() / eff).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    /// Required quality per (stream, process).
    pub omega: QualityMatrix,
    /// Transmission quality per stream; `None` for streams no process uses.
    pub q_eff: Vec<Option<StreamQuality>>,
    /// Suppression per (stream, process); `None` where the process does not use the stream.
    pub delta: Vec<Vec<Option<f64>>>,
    /// Predicted sensor egress bits/s, summed over used streams.
    pub sensor_egress_bps: f64,
}

/// Minimum-bandwidth stream qualities meeting every requirement.
///
/// `requirements[i][j]` is process `j`'s requirement on `streams[i]`.
/// Each stream is sent at the join of what its consumers need; every
/// consumer below that join gets the difference suppressed at its egress.
pub fn solve_min_bandwidth(
    streams: &[StreamId],
    requirements: &[Vec<Option<Requirement>>],
    table: &DetectionTable,
    rates: &RateModel,
) -> Result<Solution, QocError> {
    assert_eq!(streams.len(), requirements.len(), "one requirement row per stream");
    let processes = requirements.iter().map(Vec::len).max().unwrap_or(0);
    let mut omega = QualityMatrix::new(streams.to_vec(), processes);
    for (i, row) in requirements.iter().enumerate() {
        for (j, req) in row.iter().enumerate() {
            if let Some(req) = req {
                omega.set(i, j, Some(req.quality(table)?));
            }
        }
    }

    let q_eff: Vec<Option<StreamQuality>> = (0..streams.len()).map(|i| omega.effective(i).ok()).collect();

    let delta = (0..streams.len())
        .map(|i| {
            (0..processes)
                .map(|j| {
                    let need = omega.get(i, j)?;
                    Some(residual_suppression(q_eff[i]?, need))
                })
                .collect()
        })
        .collect();

    let sensor_egress_bps = q_eff
        .iter()
        .zip(&rates.streams)
        .filter_map(|(q, r)| q.map(|q| r.at(q)))
        .sum();

    Ok(Solution {
        omega,
        q_eff,
        delta,
        sensor_egress_bps,
    })
}
