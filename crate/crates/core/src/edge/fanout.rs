//! Selective cloning of TS units into per-egress datagrams.

use std::collections::BTreeMap;
use std::sync::mpsc::{SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use bytes::{Bytes, BytesMut};

use super::decide::{Action, EgressDecision};
use crate::dpi::{TsPacket, MAX_UNITS_PER_DATAGRAM, TS_PACKET_SIZE};
use crate::ids::{EgressId, StreamId};
use crate::metrics::EgressCounters;

/// Batches older than this are flushed even if not full.
pub const FLUSH_INTERVAL: Duration = Duration::from_millis(5);

/// The egress queue is full; the datagram was not accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backpressure;

/// Destination of assembled egress datagrams.
pub trait EgressSink: Send {
    fn try_send(&mut self, datagram: Bytes) -> Result<(), Backpressure>;
}

impl EgressSink for SyncSender<Bytes> {
    fn try_send(&mut self, datagram: Bytes) -> Result<(), Backpressure> {
        match SyncSender::try_send(self, datagram) {
            Ok(()) => Ok(()),
            Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => Err(Backpressure),
        }
    }
}

/// Collects datagrams in memory, optionally refusing beyond a capacity.
#[derive(Debug, Clone, Default)]
pub struct MemorySink {
    datagrams: Arc<Mutex<Vec<Bytes>>>,
    capacity: Option<usize>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        MemorySink {
            datagrams: Arc::default(),
            capacity: Some(capacity),
        }
    }

    pub fn datagrams(&self) -> Vec<Bytes> {
        self.datagrams.lock().unwrap().clone()
    }

    /// All received datagrams concatenated.
    pub fn stream_bytes(&self) -> Vec<u8> {
        self.datagrams
            .lock()
            .unwrap()
            .iter()
            .flat_map(|d| d.iter().copied())
            .collect()
    }

    pub fn unit_count(&self) -> usize {
        self.datagrams
            .lock()
            .unwrap()
            .iter()
            .map(|d| d.len() / TS_PACKET_SIZE)
            .sum()
    }
}

impl EgressSink for MemorySink {
    fn try_send(&mut self, datagram: Bytes) -> Result<(), Backpressure> {
        let mut q = self.datagrams.lock().unwrap();
        if self.capacity.is_some_and(|c| q.len() >= c) {
            return Err(Backpressure);
        }
        q.push(datagram);
        Ok(())
    }
}

/// Opens sinks for egresses as they appear in the policy.
pub trait SinkFactory: Send {
    fn open(&mut self, stream: StreamId, egress: EgressId) -> Option<Box<dyn EgressSink>>;
}

impl<F> SinkFactory for F
where
    F: FnMut(StreamId, EgressId) -> Option<Box<dyn EgressSink>> + Send,
{
    fn open(&mut self, stream: StreamId, egress: EgressId) -> Option<Box<dyn EgressSink>> {
        self(stream, egress)
    }
}

struct EgressPort {
    sink: Option<Box<dyn EgressSink>>,
    /// Shared views of forwarded units; copied only when the datagram is assembled.
    pending: Vec<(Bytes, crate::dpi::FrameClass)>,
    opened_at: Option<Instant>,
    counters: EgressCounters,
}

impl EgressPort {
    fn flush(&mut self) {
        if self.pending.is_empty() {
            return;
        }
        let mut buf = BytesMut::with_capacity(self.pending.len() * TS_PACKET_SIZE);
        for (unit, _) in &self.pending {
            buf.extend_from_slice(unit);
        }
        let n = self.pending.len() as u64;
        let accepted = match &mut self.sink {
            Some(sink) => sink.try_send(buf.freeze()).is_ok(),
            None => false,
        };
        if accepted {
            for (_, class) in &self.pending {
                self.counters.forwarded.add(*class, 1);
            }
            self.counters.bytes_out += n * TS_PACKET_SIZE as u64;
            self.counters.datagrams_out += 1;
        } else {
            self.counters.overflow_dropped += n;
        }
        self.counters.pending -= n;
        self.pending.clear();
        self.opened_at = None;
    }
}

/// Per-emission summary of [`FanOut::fan_out`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Emission {
    pub cloned: usize,
    pub suppressed: usize,
    pub orphaned: bool,
}

/// Egress side of one ingest path: one batch per egress of its stream.
pub struct FanOut {
    stream: StreamId,
    factory: Box<dyn SinkFactory>,
    ports: BTreeMap<EgressId, EgressPort>,
}

impl FanOut {
    pub fn new(stream: StreamId, factory: impl SinkFactory + 'static) -> Self {
        FanOut {
            stream,
            factory: Box::new(factory),
            ports: BTreeMap::new(),
        }
    }

    fn port(&mut self, egress: EgressId) -> &mut EgressPort {
        let stream = self.stream;
        let factory = &mut self.factory;
        self.ports.entry(egress).or_insert_with(|| EgressPort {
            sink: factory.open(stream, egress),
            pending: Vec::with_capacity(MAX_UNITS_PER_DATAGRAM),
            opened_at: None,
            counters: EgressCounters::new(stream, egress),
        })
    }

    /// Emit `pkt` to every egress the decision forwards it to. The unit's
    /// buffer is shared until its datagram is assembled.
    pub fn fan_out(&mut self, pkt: &TsPacket, decision: &EgressDecision, now: Instant) -> Emission {
        let mut emission = Emission {
            orphaned: decision.actions.is_empty(),
            ..Default::default()
        };
        for &(egress, action) in &decision.actions {
            let port = self.port(egress);
            port.counters.offered.add(decision.class, 1);
            match action {
                Action::Suppress => {
                    port.counters.policy_suppressed += 1;
                    emission.suppressed += 1;
                }
                Action::Forward => {
                    port.pending.push((pkt.raw().clone(), decision.class));
                    port.counters.pending += 1;
                    port.opened_at.get_or_insert(now);
                    if port.pending.len() == MAX_UNITS_PER_DATAGRAM {
                        port.flush();
                    }
                    emission.cloned += 1;
                }
            }
        }
        emission
    }

    /// Flush batches that have waited at least [`FLUSH_INTERVAL`].
    pub fn flush_due(&mut self, now: Instant) {
        for port in self.ports.values_mut() {
            if port
                .opened_at
                .is_some_and(|t| now.saturating_duration_since(t) >= FLUSH_INTERVAL)
            {
                port.flush();
            }
        }
    }

    pub fn flush_all(&mut self) {
        for port in self.ports.values_mut() {
            port.flush();
        }
    }

    /// Earliest instant a pending batch becomes due.
    pub fn next_deadline(&self) -> Option<Instant> {
        self.ports
            .values()
            .filter_map(|p| p.opened_at)
            .min()
            .map(|t| t + FLUSH_INTERVAL)
    }

    pub fn counters(&self) -> impl Iterator<Item = &EgressCounters> {
        self.ports.values().map(|p| &p.counters)
    }

    pub fn counter(&self, egress: EgressId) -> Option<&EgressCounters> {
        self.ports.get(&egress).map(|p| &p.counters)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpi::{parse_ts_packet, FrameClass};
    use crate::sensor::{generate_synthetic, SyntheticSpec};
    use std::collections::HashMap;

    fn memory_fanout(capacity: HashMap<EgressId, usize>) -> (FanOut, Arc<Mutex<BTreeMap<EgressId, MemorySink>>>) {
        let sinks: Arc<Mutex<BTreeMap<EgressId, MemorySink>>> = Arc::default();
        let registry = sinks.clone();
        let fanout = FanOut::new(StreamId(1), move |_s: StreamId, e: EgressId| {
            let sink = match capacity.get(&e) {
                Some(&c) => MemorySink::with_capacity(c),
                None => MemorySink::new(),
            };
            registry.lock().unwrap().insert(e, sink.clone());
            Some(Box::new(sink) as Box<dyn EgressSink>)
        });
        (fanout, sinks)
    }

    fn decision(class: FrameClass, actions: &[Action]) -> EgressDecision {
        EgressDecision {
            class,
            actions: actions
                .iter()
                .enumerate()
                .map(|(i, &a)| (EgressId(i as u16), a))
                .collect(),
        }
    }

    fn units(n: u64) -> Vec<Bytes> {
        generate_synthetic(StreamId(1), &SyntheticSpec::new(12, 1, 25.0), n)
    }

    #[test]
    fn forwards_byte_identical_copies_only_where_decided() {
        let (mut f, sinks) = memory_fanout(HashMap::new());
        let unit = units(1)[2].clone();
        let pkt = parse_ts_packet(&unit).unwrap();
        let e = f.fan_out(
            &pkt,
            &decision(
                FrameClass::Differential,
                &[Action::Forward, Action::Forward, Action::Suppress],
            ),
            Instant::now(),
        );
        assert_eq!(
            e,
            Emission {
                cloned: 2,
                suppressed: 1,
                orphaned: false
            }
        );
        f.flush_all();
        let sinks = sinks.lock().unwrap();
        assert_eq!(sinks[&EgressId(0)].stream_bytes(), unit.to_vec());
        assert_eq!(sinks[&EgressId(1)].stream_bytes(), unit.to_vec());
        assert_eq!(sinks[&EgressId(2)].unit_count(), 0);
        assert_eq!(f.counter(EgressId(2)).unwrap().policy_suppressed, 1);
    }

    #[test]
    fn batches_seven_units_then_flushes_on_timer() {
        let (mut f, sinks) = memory_fanout(HashMap::new());
        let t0 = Instant::now();
        for u in units(10).iter().take(10) {
            let pkt = parse_ts_packet(u).unwrap();
            f.fan_out(&pkt, &decision(FrameClass::Reference, &[Action::Forward]), t0);
        }
        assert_eq!(sinks.lock().unwrap()[&EgressId(0)].datagrams().len(), 1);
        assert_eq!(f.next_deadline(), Some(t0 + FLUSH_INTERVAL));
        f.flush_due(t0 + Duration::from_millis(4));
        assert_eq!(f.counter(EgressId(0)).unwrap().pending, 3);
        f.flush_due(t0 + FLUSH_INTERVAL);
        let grams = sinks.lock().unwrap()[&EgressId(0)].datagrams();
        assert_eq!(
            grams.iter().map(|g| g.len() / TS_PACKET_SIZE).collect::<Vec<_>>(),
            vec![7, 3]
        );
        assert_eq!(f.next_deadline(), None);
    }

    #[test]
    fn backpressure_only_hits_the_full_egress() {
        let (mut f, sinks) = memory_fanout([(EgressId(1), 1)].into());
        let now = Instant::now();
        for u in &units(14)[..14] {
            let pkt = parse_ts_packet(u).unwrap();
            f.fan_out(
                &pkt,
                &decision(FrameClass::Reference, &[Action::Forward, Action::Forward]),
                now,
            );
        }
        let c0 = f.counter(EgressId(0)).unwrap();
        let c1 = f.counter(EgressId(1)).unwrap();
        assert_eq!((c0.forwarded.total(), c0.overflow_dropped), (14, 0));
        assert_eq!((c1.forwarded.total(), c1.overflow_dropped), (7, 7));
        assert!(c0.is_conserved() && c1.is_conserved());
        assert_eq!(sinks.lock().unwrap()[&EgressId(0)].unit_count(), 14);
    }

    #[test]
    fn empty_decision_is_orphaned() {
        let (mut f, _) = memory_fanout(HashMap::new());
        let pkt = parse_ts_packet(&units(1)[2]).unwrap();
        let e = f.fan_out(&pkt, &decision(FrameClass::Reference, &[]), Instant::now());
        assert!(e.orphaned);
        assert_eq!(f.counters().count(), 0);
    }
}
