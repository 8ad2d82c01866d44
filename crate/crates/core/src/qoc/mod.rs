//! Quality-of-computing policy arithmetic.
//!
//! A stream's quality is one-dimensional here: the fraction of its
//! differential-frame packets that are retained. Reference frames and
//! non-video packets are always kept.

mod rate;
mod solve;
mod table;

use serde::{Deserialize, Serialize};

pub use rate::{bandwidth_full, bandwidth_saved, RateModel, StreamRate};
pub use solve::{residual_suppression, solve_min_bandwidth, Requirement, Solution};
pub use table::{detection_lookup, max_tolerable_loss, DetectionRow, DetectionTable, Strategy};

use crate::ids::StreamId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QocError {
    #[error("differential keep fraction {0} outside [0, 1]")]
    InvalidKeep(f64),
    #[error("threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("threshold {threshold} is above the zero-loss {strategy} detection rate {best}")]
    Infeasible {
        threshold: f64,
        strategy: Strategy,
        best: f64,
    },
    #[error("no process uses stream {0}")]
    EmptyRequirement(StreamId),
    #[error("detection table: {0}")]
    Table(String),
}

/// Retention level of a stream.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct StreamQuality {
    differential_keep: f64,
}

impl StreamQuality {
    /// Every packet retained.
    pub const FULL: StreamQuality = StreamQuality { differential_keep: 1.0 };
    /// Only reference and non-video packets retained.
    pub const REFERENCE_ONLY: StreamQuality = StreamQuality { differential_keep: 0.0 };

    pub fn new(differential_keep: f64) -> Result<Self, QocError> {
        if (0.0..=1.0).contains(&differential_keep) {
            Ok(StreamQuality { differential_keep })
        } else {
            Err(QocError::InvalidKeep(differential_keep))
        }
    }

    pub fn differential_keep(self) -> f64 {
        self.differential_keep
    }

    /// Fraction of differential packets suppressed.
    pub fn loss_tolerance(self) -> f64 {
        1.0 - self.differential_keep
    }

    /// Least-suppressed of two requirements.
    pub fn join(self, other: StreamQuality) -> StreamQuality {
        if other.differential_keep > self.differential_keep {
            other
        } else {
            self
        }
    }
}

impl TryFrom<f64> for StreamQuality {
    type Error = QocError;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        StreamQuality::new(v)
    }
}

impl From<StreamQuality> for f64 {
    fn from(q: StreamQuality) -> f64 {
        q.differential_keep
    }
}

/// Quality a stream must be transmitted at so every process using it is served.
pub fn effective_quality(row: &[StreamQuality]) -> Option<StreamQuality> {
    row.iter().copied().reduce(StreamQuality::join)
}

/// Per-(stream, process) quality requirements; `None` where the process does
/// not use the stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityMatrix {
    streams: Vec<StreamId>,
    cells: Vec<Vec<Option<StreamQuality>>>,
    processes: usize,
}

impl QualityMatrix {
    pub fn new(streams: Vec<StreamId>, processes: usize) -> Self {
        let cells = vec![vec![None; processes]; streams.len()];
        QualityMatrix {
            streams,
            cells,
            processes,
        }
    }

    pub fn streams(&self) -> &[StreamId] {
        &self.streams
    }

    pub fn process_count(&self) -> usize {
        self.processes
    }

    pub fn set(&mut self, stream: usize, process: usize, q: Option<StreamQuality>) {
        self.cells[stream][process] = q;
    }

    pub fn get(&self, stream: usize, process: usize) -> Option<StreamQuality> {
        self.cells[stream][process]
    }

    pub fn row(&self, stream: usize) -> &[Option<StreamQuality>] {
        &self.cells[stream]
    }

    /// Effective quality of stream `i`, or `EmptyRequirement` if no process uses it.
    pub fn effective(&self, stream: usize) -> Result<StreamQuality, QocError> {
        let row: Vec<_> = self.cells[stream].iter().flatten().copied().collect();
        effective_quality(&row).ok_or(QocError::EmptyRequirement(self.streams[stream]))
    }
}
