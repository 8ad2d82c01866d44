//! Deterministic rate suppression by error diffusion.

use std::collections::HashMap;

use serde::Serialize;

use crate::ids::{EgressId, StreamId};

/// Drops a fixed long-run fraction of the packets offered to it.
///
/// After `n` offers at constant rate `d` the drop count is always within one of
/// `n * d`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ErrorDiffuser {
    accumulator: f64,
}

impl ErrorDiffuser {
    /// Returns `true` if this offer is dropped.
    pub fn offer(&mut self, rate: f64) -> bool {
        self.accumulator += rate;
        if self.accumulator >= 1.0 {
            self.accumulator -= 1.0;
            true
        } else {
            false
        }
    }

    pub fn accumulator(&self) -> f64 {
        self.accumulator
    }
}

/// Suppression bookkeeping for one (stream, egress) pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SuppressionCounter {
    pub diffuser: ErrorDiffuser,
    pub dropped: u64,
    pub forwarded: u64,
}

/// Suppression state owned by one ingest path.
#[derive(Debug, Clone, Default)]
pub struct SuppressionState {
    counters: HashMap<(StreamId, EgressId), SuppressionCounter>,
}

impl SuppressionState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn counter_mut(&mut self, stream: StreamId, egress: EgressId) -> &mut SuppressionCounter {
        self.counters.entry((stream, egress)).or_default()
    }

    pub fn counter(&self, stream: StreamId, egress: EgressId) -> Option<&SuppressionCounter> {
        self.counters.get(&(stream, egress))
    }
}
