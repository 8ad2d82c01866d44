//! The per-ingress data path: classify, decide, clone.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use bytes::Bytes;

use super::decide::{decide, EgressDecision};
use super::fanout::{FanOut, SinkFactory};
use super::policy::SharedPolicy;
use super::suppress::SuppressionState;
use crate::dpi::{scan_datagram, Classifier, DpiError, FrameClass};
use crate::ids::{EgressId, IngressPort, StreamId};
use crate::metrics::{CpuTally, EgressCounters, IngressCounters};

/// Processes every datagram arriving on one ingress port.
pub struct EdgeEngine {
    ingress: IngressPort,
    stream: StreamId,
    policy: Arc<SharedPolicy>,
    seen_version: Option<u64>,
    classifier: Classifier,
    suppression: SuppressionState,
    fanout: FanOut,
    counters: IngressCounters,
    cpu: CpuTally,
    started: Instant,
}

impl EdgeEngine {
    pub fn new(
        ingress: IngressPort,
        stream: StreamId,
        policy: Arc<SharedPolicy>,
        sinks: impl SinkFactory + 'static,
    ) -> Self {
        EdgeEngine {
            ingress,
            stream,
            policy,
            seen_version: None,
            classifier: Classifier::default(),
            suppression: SuppressionState::new(),
            fanout: FanOut::new(stream, sinks),
            counters: IngressCounters::new(stream),
            cpu: CpuTally::default(),
            started: Instant::now(),
        }
    }

    /// Measure rate windows from `started` instead of construction time.
    pub fn with_start(mut self, started: Instant) -> Self {
        self.started = started;
        self
    }

    pub fn stream(&self) -> StreamId {
        self.stream
    }

    pub fn ingress(&self) -> IngressPort {
        self.ingress
    }

    /// Run one datagram through the data path. Each packet is handled under a
    /// single policy snapshot.
    pub fn process_datagram(&mut self, datagram: Bytes, now: Instant) -> Result<usize, DpiError> {
        self.counters.datagrams_in += 1;
        let packets = match scan_datagram(&datagram) {
            Ok(p) => p,
            Err(e) => {
                self.counters.framing_errors += 1;
                return Err(e);
            }
        };
        self.counters
            .rate
            .record(now.saturating_duration_since(self.started), datagram.len() as u64);
        self.counters.bytes_in += datagram.len() as u64;

        for pkt in &packets {
            let snapshot = self.policy.load();
            if self.seen_version != Some(snapshot.version()) {
                self.seen_version = Some(snapshot.version());
                let empty = BTreeSet::new();
                self.classifier
                    .set_video_pids(snapshot.video_pids(self.stream).unwrap_or(&empty));
            }

            let (class, obs) = self.classifier.classify_observed(pkt);
            self.cpu.parsed += 1;
            self.counters.packets_in.add(class, 1);
            self.counters.unknown_class += u64::from(class == FrameClass::Unknown);
            self.counters.continuity_gaps += u64::from(obs.continuity_gap);

            let decision = match snapshot.entry(self.stream).filter(|e| e.ingress == self.ingress) {
                Some(entry) => decide(class, entry, &mut self.suppression),
                None => EgressDecision {
                    class,
                    actions: Vec::new(),
                },
            };
            self.cpu.decisions += decision.actions.len() as u64;
            let emission = self.fanout.fan_out(pkt, &decision, now);
            self.cpu.clones += emission.cloned as u64;
            self.counters.orphaned += u64::from(emission.orphaned);
        }
        self.fanout.flush_due(now);
        Ok(packets.len())
    }

    /// Flush batches whose 5 ms timer has expired.
    pub fn poll_timers(&mut self, now: Instant) {
        self.fanout.flush_due(now);
    }

    pub fn next_deadline(&self) -> Option<Instant> {
        self.fanout.next_deadline()
    }

    pub fn flush(&mut self) {
        self.fanout.flush_all();
    }

    pub fn ingress_counters(&self) -> &IngressCounters {
        &self.counters
    }

    pub fn egress_counters(&self) -> Vec<EgressCounters> {
        self.fanout.counters().cloned().collect()
    }

    pub fn egress_counter(&self, egress: EgressId) -> Option<&EgressCounters> {
        self.fanout.counter(egress)
    }

    pub fn cpu_tally(&self) -> CpuTally {
        self.cpu
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }
}
