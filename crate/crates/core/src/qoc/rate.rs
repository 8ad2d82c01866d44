//! Affine bandwidth model of a suppressed stream.

use serde::{Deserialize, Serialize};

use super::StreamQuality;

/// Bit rates of one stream at full quality, split by suppressibility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamRate {
    /// Reference-frame and non-video bits/s; never suppressed.
    pub ref_rate: f64,
    /// Differential-frame bits/s at full quality.
    pub diff_rate: f64,
}

impl StreamRate {
    pub fn new(ref_rate: f64, diff_rate: f64) -> Self {
        debug_assert!(ref_rate >= 0.0 && diff_rate >= 0.0);
        StreamRate { ref_rate, diff_rate }
    }

    /// Bandwidth of the stream transmitted at quality `q`.
    pub fn at(&self, q: StreamQuality) -> f64 {
        self.ref_rate + q.differential_keep() * self.diff_rate
    }

    pub fn full(&self) -> f64 {
        self.at(StreamQuality::FULL)
    }

    /// Share of full-quality bits carried by differential frames.
    pub fn differential_share(&self) -> f64 {
        let total = self.full();
        if total == 0.0 {
            0.0
        } else {
            self.diff_rate / total
        }
    }
}

/// Per-stream rates, indexed like the stream list they were built from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RateModel {
    pub streams: Vec<StreamRate>,
}

impl RateModel {
    pub fn new(streams: Vec<StreamRate>) -> Self {
        RateModel { streams }
    }

    pub fn len(&self) -> usize {
        self.streams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streams.is_empty()
    }

    /// Sum of full-quality stream rates: the edge-replicated transmission cost.
    pub fn total_full(&self) -> f64 {
        self.streams.iter().map(StreamRate::full).sum()
    }

    /// Sum of stream rates at the given per-stream qualities.
    pub fn total_at(&self, q: &[StreamQuality]) -> f64 {
        assert_eq!(q.len(), self.streams.len(), "one quality per stream");
        self.streams.iter().zip(q).map(|(s, &q)| s.at(q)).sum()
    }
}

/// Bandwidth when every one of `processes` receives its own full-quality copy
/// of every stream.
pub fn bandwidth_full(rates: &RateModel, processes: usize) -> f64 {
    processes as f64 * rates.total_full()
}

/// Access-network bandwidth saved by transmitting each stream at `q_eff`
/// instead of full quality.
pub fn bandwidth_saved(rates: &RateModel, q_eff: &[StreamQuality]) -> f64 {
    (rates.total_full() - rates.total_at(q_eff)).max(0.0)
}
