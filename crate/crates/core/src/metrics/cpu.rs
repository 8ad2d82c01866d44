//! Deterministic CPU-cost model of the edge data path.

use serde::{Deserialize, Serialize};

/// Operation counts from which cost is derived.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CpuTally {
    /// Packets parsed and classified.
    pub parsed: u64,
    /// Per-egress forward/suppress decisions.
    pub decisions: u64,
    /// Forwarded copies.
    pub clones: u64,
}

impl CpuTally {
    pub fn merge(&mut self, other: &CpuTally) {
        self.parsed += other.parsed;
        self.decisions += other.decisions;
        self.clones += other.clones;
    }
}

/// Cost weights, in arbitrary units per operation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpuProxy {
    pub c_parse: f64,
    pub c_decide: f64,
    pub c_clone: f64,
}

impl Default for CpuProxy {
    fn default() -> Self {
        // A clone allocates and copies a buffer, which dominates header work.
        CpuProxy {
            c_parse: 1.0,
            c_decide: 0.25,
            c_clone: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CpuCost {
    pub parse: f64,
    pub decide: f64,
    pub clone: f64,
    pub total: f64,
}

impl CpuProxy {
    pub fn cost(&self, tally: &CpuTally) -> CpuCost {
        let parse = self.c_parse * tally.parsed as f64;
        let decide = self.c_decide * tally.decisions as f64;
        let clone = self.c_clone * tally.clones as f64;
        CpuCost {
            parse,
            decide,
            clone,
            total: parse + decide + clone,
        }
    }
}
