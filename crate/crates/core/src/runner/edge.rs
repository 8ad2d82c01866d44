//! Edge roles: the control reconciler, one data path per ingress port and one
//! sender per egress.

use std::collections::{BTreeMap, HashMap};
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use bytes::Bytes;

use super::sensor::SensorSignal;
use crate::control::codec::{TYPE_POLICY_UPDATE, TYPE_QUALITY_NOTIFY, TYPE_SINK_REGISTER};
use crate::control::transport::{is_timeout, MAX_CONTROL_DATAGRAM};
use crate::control::{
    wire_threshold, Ack, AckKey, AckStatus, ControlChange, ControlMessage, Fixed16, PolicyUpdateMsg, ReconcileOutcome,
    Reconciler, RegisterAction, RetryPolicy, RetryQueue, SinkRegister,
};
use crate::edge::{EdgeEngine, EgressSink};
use crate::ids::{EgressId, ProcessId, StreamId};

const IDLE_POLL: Duration = Duration::from_millis(20);

struct EgressHandle {
    tx: mpsc::SyncSender<Bytes>,
    dest: Arc<Mutex<SocketAddr>>,
}

/// Egress queues by id, shared between the control thread (which creates
/// them) and the data paths (which open them on first use).
#[derive(Clone, Default)]
pub(crate) struct EgressRegistry(Arc<Mutex<HashMap<EgressId, EgressHandle>>>);

impl EgressRegistry {
    pub(crate) fn sender(&self, egress: EgressId) -> Option<Box<dyn EgressSink>> {
        let map = self.0.lock().unwrap();
        map.get(&egress).map(|h| Box::new(h.tx.clone()) as Box<dyn EgressSink>)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct EgressSendStats {
    pub datagrams: u64,
    pub send_errors: u64,
}

fn spawn_egress(
    egress: EgressId,
    dest: SocketAddr,
    capacity: usize,
    stop: Arc<AtomicBool>,
) -> std::io::Result<(EgressHandle, JoinHandle<EgressSendStats>)> {
    let socket = UdpSocket::bind(if dest.ip().is_loopback() {
        "127.0.0.1:0"
    } else {
        "0.0.0.0:0"
    })?;
    let _ = socket2::SockRef::from(&socket).set_send_buffer_size(4 << 20);
    let (tx, rx) = mpsc::sync_channel::<Bytes>(capacity);
    let dest = Arc::new(Mutex::new(dest));
    let target = dest.clone();
    let handle = thread::Builder::new().name(format!("egress-{egress}")).spawn(move || {
        let mut stats = EgressSendStats::default();
        let mut send = |d: &Bytes| {
            let to = *target.lock().unwrap();
            match socket.send_to(d, to) {
                Ok(_) => stats.datagrams += 1,
                Err(e) => {
                    stats.send_errors += 1;
                    log::debug!("egress {egress}: send to {to} failed: {e}");
                }
            }
        };
        loop {
            match rx.recv_timeout(IDLE_POLL) {
                Ok(d) => send(&d),
                Err(RecvTimeoutError::Timeout) if stop.load(Ordering::Acquire) => break,
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
        }
        while let Ok(d) = rx.try_recv() {
            send(&d);
        }
        stats
    })?;
    Ok((EgressHandle { tx, dest }, handle))
}

/// Run one ingress data path until `stop`, then flush and hand the engine back.
pub(crate) fn spawn_ingress(
    socket: UdpSocket,
    mut engine: EdgeEngine,
    stop: Arc<AtomicBool>,
) -> std::io::Result<JoinHandle<EdgeEngine>> {
    thread::Builder::new()
        .name(format!("ingress-{}", engine.stream()))
        .spawn(move || {
            let mut buf = vec![0u8; 65536];
            let mut timeout = IDLE_POLL;
            let _ = socket.set_read_timeout(Some(timeout));
            loop {
                match socket.recv_from(&mut buf) {
                    Ok((n, _)) => {
                        // The one ingest copy; every clone below shares it.
                        let datagram = Bytes::copy_from_slice(&buf[..n]);
                        if let Err(e) = engine.process_datagram(datagram, Instant::now()) {
                            log::debug!("stream {}: dropped datagram: {e}", engine.stream());
                        }
                    }
                    Err(e) if is_timeout(&e) => {
                        engine.poll_timers(Instant::now());
                        if stop.load(Ordering::Acquire) {
                            break;
                        }
                    }
                    Err(e) => {
                        log::warn!("stream {}: ingress receive failed: {e}", engine.stream());
                        thread::sleep(IDLE_POLL);
                    }
                }
                let wanted = match engine.next_deadline() {
                    Some(_) => Duration::from_millis(1),
                    None => IDLE_POLL,
                };
                if wanted != timeout {
                    timeout = wanted;
                    let _ = socket.set_read_timeout(Some(timeout));
                }
            }
            engine.flush();
            engine
        })
}

/// Control-plane bookkeeping carried into the report.
#[derive(Debug, Default)]
pub(crate) struct ControlLog {
    pub reconciles: u64,
    pub rejected: Vec<String>,
    pub unacked: Vec<String>,
}

pub(crate) struct EdgeControlSummary {
    pub reconciler: Reconciler,
    pub log: ControlLog,
    pub egress_stats: BTreeMap<EgressId, EgressSendStats>,
}

pub(crate) struct EdgeControl {
    pub socket: UdpSocket,
    pub reconciler: Reconciler,
    pub registry: EgressRegistry,
    pub queue_capacity: usize,
    pub sensor_control: BTreeMap<StreamId, SocketAddr>,
    pub sensor_signals: BTreeMap<StreamId, Sender<SensorSignal>>,
    pub egress_stop: Arc<AtomicBool>,
}

struct ControlLoop {
    cfg: EdgeControl,
    retry: RetryQueue,
    sinks: BTreeMap<ProcessId, SocketAddr>,
    egress_threads: BTreeMap<EgressId, JoinHandle<EgressSendStats>>,
    log: ControlLog,
}

impl EdgeControl {
    pub(crate) fn spawn(self, stop: Arc<AtomicBool>) -> std::io::Result<JoinHandle<EdgeControlSummary>> {
        thread::Builder::new().name("edge-control".into()).spawn(move || {
            let mut l = ControlLoop {
                cfg: self,
                retry: RetryQueue::new(RetryPolicy::default()),
                sinks: BTreeMap::new(),
                egress_threads: BTreeMap::new(),
                log: ControlLog::default(),
            };
            l.run(&stop);
            l.finish()
        })
    }
}

impl ControlLoop {
    fn run(&mut self, stop: &AtomicBool) {
        let mut buf = [0u8; MAX_CONTROL_DATAGRAM];
        // Start with every stream paused: nothing is consumed yet.
        let initial = self.cfg.reconciler.reconcile(&[]);
        self.after_commit(&initial);
        loop {
            let now = Instant::now();
            let wait = self
                .retry
                .next_deadline()
                .map(|d| d.saturating_duration_since(now))
                .unwrap_or(IDLE_POLL)
                .clamp(Duration::from_millis(1), IDLE_POLL);
            let _ = self.cfg.socket.set_read_timeout(Some(wait));
            match self.cfg.socket.recv_from(&mut buf) {
                Ok((n, from)) => match ControlMessage::decode(&buf[..n]) {
                    Ok(msg) => self.handle(msg, from),
                    Err(e) => log::warn!("edge control: bad message from {from}: {e}"),
                },
                Err(e) if is_timeout(&e) => {}
                Err(e) => log::warn!("edge control: receive failed: {e}"),
            }
            for (dest, bytes) in self.retry.due(Instant::now()) {
                self.send_raw(dest, &bytes);
            }
            if stop.load(Ordering::Acquire) {
                break;
            }
        }
    }

    fn finish(mut self) -> EdgeControlSummary {
        self.log.unacked = self
            .retry
            .flagged()
            .iter()
            .map(|u| format!("type {} key {} to {}", u.expect.acked_type, u.expect.key, u.dest))
            .collect();
        self.cfg.egress_stop.store(true, Ordering::Release);
        EdgeControlSummary {
            reconciler: self.cfg.reconciler,
            log: self.log,
            egress_stats: BTreeMap::new(),
        }
        .with_threads(self.egress_threads)
    }

    fn handle(&mut self, msg: ControlMessage, from: SocketAddr) {
        match msg {
            ControlMessage::SinkRegister(m) => self.register(&m, from),
            ControlMessage::PolicyUpdate(m) => self.override_deltas(&m, from),
            ControlMessage::Ack(a) => {
                self.retry.acknowledge(from, &a);
            }
            ControlMessage::QualityNotify(_) => {
                log::debug!("edge control: ignoring quality notify from {from}");
            }
        }
    }

    fn register(&mut self, m: &SinkRegister, from: SocketAddr) {
        let egress = EgressId::from(m.process);
        if m.action == RegisterAction::Register {
            if let Err(e) = self.ensure_egress(egress, SocketAddr::V4(m.egress)) {
                log::error!("process {}: cannot open egress: {e}", m.process);
                self.ack(from, TYPE_SINK_REGISTER, AckStatus::Rejected, m.process.0, 0);
                return;
            }
        }
        let outcome = self.cfg.reconciler.reconcile(&[ControlChange::from(m)]);
        let status = if outcome.rejected.is_empty() {
            match m.action {
                RegisterAction::Register => {
                    self.sinks.insert(m.process, from);
                }
                RegisterAction::Deregister => {
                    self.sinks.remove(&m.process);
                }
            }
            AckStatus::Ok
        } else {
            AckStatus::Rejected
        };
        self.ack(from, TYPE_SINK_REGISTER, status, m.process.0, outcome.version as u32);
        self.after_commit(&outcome);
    }

    fn override_deltas(&mut self, m: &PolicyUpdateMsg, from: SocketAddr) {
        let outcome = self.cfg.reconciler.reconcile(&operator_changes(m));
        let status = if outcome.rejected.is_empty() {
            AckStatus::Ok
        } else {
            AckStatus::Rejected
        };
        self.ack(from, TYPE_POLICY_UPDATE, status, m.stream.0, outcome.version as u32);
        self.after_commit(&outcome);
    }

    /// Tell sensors and sinks about a new policy version.
    fn after_commit(&mut self, outcome: &ReconcileOutcome) {
        self.log.reconciles += 1;
        for r in &outcome.rejected {
            let who = r.process.map(|p| format!("process {p}: ")).unwrap_or_default();
            log::warn!("rejected {who}{}", r.reason);
            self.log.rejected.push(format!("{who}{}", r.reason));
        }
        for s in &outcome.paused {
            log::info!("stream {s} unused; pausing sensor");
            if let Some(tx) = self.cfg.sensor_signals.get(s) {
                let _ = tx.send(SensorSignal::Pause);
            }
        }
        for s in &outcome.resumed {
            log::info!("stream {s} in use; resuming sensor");
            if let Some(tx) = self.cfg.sensor_signals.get(s) {
                let _ = tx.send(SensorSignal::Resume);
            }
        }
        let now = Instant::now();
        for n in &outcome.notifications {
            let Some(&dest) = self.cfg.sensor_control.get(&n.stream) else {
                continue;
            };
            log::info!("notify stream {} keep {:.4}", n.stream, n.keep.to_f64());
            let expect = AckKey {
                acked_type: TYPE_QUALITY_NOTIFY,
                key: n.stream.0,
                token: u32::from(n.keep.0),
            };
            self.push(dest, &ControlMessage::QualityNotify(*n), expect, now);
        }

        let map = self.cfg.reconciler.policy().snapshot();
        let sinks: Vec<(ProcessId, SocketAddr)> = self.sinks.iter().map(|(p, a)| (*p, *a)).collect();
        for (process, dest) in sinks {
            let Some(reg) = self.cfg.reconciler.registrations().get(&process) else {
                continue;
            };
            let streams: Vec<StreamId> = reg.requirements.keys().copied().collect();
            for stream in streams {
                let Some(delta) = map.entry(stream).and_then(|e| e.delta(process.into())) else {
                    continue;
                };
                let delta = Fixed16::from_f64(delta);
                let msg = ControlMessage::PolicyUpdate(PolicyUpdateMsg {
                    stream,
                    egresses: vec![(process.into(), delta)],
                });
                let expect = AckKey {
                    acked_type: TYPE_POLICY_UPDATE,
                    key: stream.0,
                    token: u32::from(delta.0),
                };
                self.push(dest, &msg, expect, now);
            }
        }
    }

    fn push(&mut self, dest: SocketAddr, msg: &ControlMessage, expect: AckKey, now: Instant) {
        match self.retry.push(dest, msg, expect, now) {
            Ok((dest, bytes)) => self.send_raw(dest, &bytes),
            Err(e) => log::error!("cannot encode control message: {e}"),
        }
    }

    fn ack(&self, to: SocketAddr, acked_type: u8, status: AckStatus, key: u16, token: u32) {
        let msg = ControlMessage::Ack(Ack {
            acked_type,
            status,
            key,
            token,
        });
        if let Ok(bytes) = msg.encode() {
            self.send_raw(to, &bytes);
        }
    }

    fn send_raw(&self, to: SocketAddr, bytes: &[u8]) {
        if let Err(e) = self.cfg.socket.send_to(bytes, to) {
            log::warn!("edge control: send to {to} failed: {e}");
        }
    }

    fn ensure_egress(&mut self, egress: EgressId, dest: SocketAddr) -> std::io::Result<()> {
        let mut map = self.cfg.registry.0.lock().unwrap();
        if let Some(h) = map.get(&egress) {
            *h.dest.lock().unwrap() = dest;
            return Ok(());
        }
        let (handle, thread) = spawn_egress(egress, dest, self.cfg.queue_capacity, self.cfg.egress_stop.clone())?;
        map.insert(egress, handle);
        self.egress_threads.insert(egress, thread);
        Ok(())
    }
}

impl EdgeControlSummary {
    fn with_threads(mut self, threads: BTreeMap<EgressId, JoinHandle<EgressSendStats>>) -> Self {
        for (egress, t) in threads {
            self.egress_stats.insert(egress, t.join().unwrap_or_default());
        }
        self
    }
}

/// Operator overrides carried by a policy update; an empty egress list
/// clears the stream's overrides.
pub(crate) fn operator_changes(m: &PolicyUpdateMsg) -> Vec<ControlChange> {
    if m.egresses.is_empty() {
        return vec![ControlChange::ClearOverrides(m.stream)];
    }
    m.egresses
        .iter()
        .map(|&(egress, delta)| ControlChange::OverrideDelta {
            stream: m.stream,
            egress,
            delta: Some(wire_threshold(delta)),
        })
        .collect()
}
