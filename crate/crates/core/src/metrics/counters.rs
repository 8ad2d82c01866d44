//! Packet and byte counters kept by the data paths.

use std::ops::{Index, IndexMut};
use std::time::Duration;

use serde::Serialize;

use crate::dpi::{FrameClass, TS_PACKET_SIZE};
use crate::ids::{EgressId, StreamId};

/// A count per [`FrameClass`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts([u64; 4]);

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn add(&mut self, class: FrameClass, n: u64) {
        self.0[class.index()] += n;
    }
}

impl Index<FrameClass> for ClassCounts {
    type Output = u64;

    fn index(&self, class: FrameClass) -> &u64 {
        &self.0[class.index()]
    }
}

impl IndexMut<FrameClass> for ClassCounts {
    fn index_mut(&mut self, class: FrameClass) -> &mut u64 {
        &mut self.0[class.index()]
    }
}

impl Serialize for ClassCounts {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut m = s.serialize_map(Some(4))?;
        for class in FrameClass::ALL {
            m.serialize_entry(&class, &self[class])?;
        }
        m.end()
    }
}

/// Bytes bucketed into fixed windows measured from a start instant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowedBytes {
    #[serde(skip)]
    window: Duration,
    pub buckets: Vec<u64>,
}

impl Default for WindowedBytes {
    fn default() -> Self {
        Self::new(Duration::from_secs(1))
    }
}

impl WindowedBytes {
    pub fn new(window: Duration) -> Self {
        WindowedBytes {
            window,
            buckets: Vec::new(),
        }
    }

    pub fn record(&mut self, elapsed: Duration, bytes: u64) {
        let idx = (elapsed.as_nanos() / self.window.as_nanos()) as usize;
        if self.buckets.len() <= idx {
            self.buckets.resize(idx + 1, 0);
        }
        self.buckets[idx] += bytes;
    }

    /// Bits per second of each completed window.
    pub fn bitrates(&self) -> Vec<f64> {
        let secs = self.window.as_secs_f64();
        self.buckets.iter().map(|&b| b as f64 * 8.0 / secs).collect()
    }

    /// Mean bits/s over windows `from..to` (clamped to the recorded range).
    pub fn mean_bitrate(&self, from: usize, to: usize) -> Option<f64> {
        let to = to.min(self.buckets.len());
        if from >= to {
            return None;
        }
        let bytes: u64 = self.buckets[from..to].iter().sum();
        Some(bytes as f64 * 8.0 / (self.window.as_secs_f64() * (to - from) as f64))
    }
}

/// Edge accounting for one (stream, egress) pair.
///
/// Every packet offered to the egress ends up in exactly one of `forwarded`,
/// `policy_suppressed` or `overflow_dropped` once pending batches are flushed.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EgressCounters {
    pub stream: StreamId,
    pub egress: EgressId,
    pub offered: ClassCounts,
    pub forwarded: ClassCounts,
    pub policy_suppressed: u64,
    pub overflow_dropped: u64,
    /// Units accepted into a batch that has not been flushed yet.
    pub pending: u64,
    pub bytes_out: u64,
    pub datagrams_out: u64,
}

impl EgressCounters {
    pub fn new(stream: StreamId, egress: EgressId) -> Self {
        EgressCounters {
            stream,
            egress,
            ..Default::default()
        }
    }

    pub fn is_conserved(&self) -> bool {
        self.offered.total() == self.forwarded.total() + self.policy_suppressed + self.overflow_dropped + self.pending
    }

    /// Fraction of offered differential packets that were suppressed by policy.
    pub fn realized_suppression(&self) -> Option<f64> {
        let offered = self.offered[FrameClass::Differential];
        (offered > 0).then(|| self.policy_suppressed as f64 / offered as f64)
    }
}

/// Edge ingress accounting for one stream.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngressCounters {
    pub stream: StreamId,
    pub datagrams_in: u64,
    pub packets_in: ClassCounts,
    pub bytes_in: u64,
    /// Packets that arrived while the stream's entry had no egress.
    pub orphaned: u64,
    pub unknown_class: u64,
    pub continuity_gaps: u64,
    pub framing_errors: u64,
    pub rate: WindowedBytes,
}

impl IngressCounters {
    pub fn new(stream: StreamId) -> Self {
        IngressCounters {
            stream,
            ..Default::default()
        }
    }
}

/// Sensor transmit accounting.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SensorCounters {
    pub stream: StreamId,
    pub packets_in: ClassCounts,
    pub packets_out: ClassCounts,
    pub bytes_out: u64,
    pub datagrams_out: u64,
    /// Bytes offered before suppression, per window.
    pub rate_in: WindowedBytes,
    /// Bytes transmitted, per window.
    pub rate: WindowedBytes,
}

impl SensorCounters {
    pub fn new(stream: StreamId) -> Self {
        SensorCounters {
            stream,
            ..Default::default()
        }
    }

    pub fn record_in(&mut self, class: FrameClass) {
        self.packets_in.add(class, 1);
    }

    pub fn record_out(&mut self, class: FrameClass) {
        self.packets_out.add(class, 1);
        self.bytes_out += TS_PACKET_SIZE as u64;
    }

    pub fn suppressed(&self) -> u64 {
        self.packets_in.total() - self.packets_out.total()
    }
}
