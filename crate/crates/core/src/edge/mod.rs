//! Edge data plane: per-stream replication to computation sinks with
//! content-aware suppression.

mod control;
mod decide;
mod engine;
mod fanout;
mod policy;
mod suppress;

pub use control::{edge_control, EdgeControlOutput, SensorDesc};
pub use decide::{decide, Action, EgressDecision};
pub use engine::EdgeEngine;
pub use fanout::{Backpressure, EgressSink, Emission, FanOut, MemorySink, SinkFactory, FLUSH_INTERVAL};
pub use policy::{apply_policy_update, EgressPolicy, PolicyEntry, PolicyMap, PolicyUpdate, SharedPolicy};
pub use suppress::{ErrorDiffuser, SuppressionCounter, SuppressionState};

use crate::ids::{EgressId, IngressPort, StreamId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EdgeError {
    #[error("suppression factor {0} outside [0, 1]")]
    InvalidDelta(f64),
    #[error("egress {0} listed twice for one stream")]
    DuplicateEgress(EgressId),
    #[error("stream {0} has no policy entry")]
    UnknownStream(StreamId),
    #[error("ingress {0} already carries stream {1}")]
    IngressInUse(IngressPort, StreamId),
    #[error("PID {0:#x} exceeds 13 bits")]
    InvalidPid(u16),
}
