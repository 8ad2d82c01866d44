//! Scenario runner: every role of a deployment in one process, over UDP
//! loopback or real interfaces, or on a virtual clock.

mod assemble;
mod edge;
mod sensor;
mod simulate;
mod sink;
mod timeline;

use std::collections::BTreeMap;
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use socket2::{Domain, Protocol, Socket, Type};

pub use simulate::simulate;

use assemble::{assemble, RunState};
use edge::{spawn_ingress, EdgeControl, EgressRegistry};
use sensor::SensorRole;
use sink::{spawn_sink_data, SinkCommand, SinkControl};
use timeline::{ProcessBook, Step};

use crate::control::codec::TYPE_POLICY_UPDATE;
use crate::control::{request, AckStatus, ControlMessage, Reconciler, RetryPolicy};
use crate::edge::{EdgeEngine, PolicyMap, SharedPolicy};
use crate::ids::{IngressPort, ProcessId};
use crate::metrics::{Report, TimelineEntry};
use crate::scenario::Scenario;

/// Time for in-flight datagrams to drain between shutdown stages.
const DRAIN: Duration = Duration::from_millis(100);

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("scenario is invalid:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("cannot bind {what} to {addr}: {source}")]
    Bind {
        what: String,
        addr: SocketAddrV4,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn bind(what: impl Into<String>, addr: SocketAddrV4) -> Result<UdpSocket, RunError> {
    UdpSocket::bind(addr).map_err(|source| RunError::Bind {
        what: what.into(),
        addr,
        source,
    })
}

fn bind_receiver(what: String, addr: SocketAddrV4, recv_buffer: usize) -> Result<UdpSocket, RunError> {
    let err = |source| RunError::Bind {
        what: what.clone(),
        addr,
        source,
    };
    let socket = Socket::new(Domain::IPV4, Type::DGRAM, Some(Protocol::UDP)).map_err(err)?;
    if let Err(e) = socket.set_recv_buffer_size(recv_buffer) {
        log::warn!("{what}: cannot set receive buffer to {recv_buffer} bytes: {e}");
    }
    socket.bind(&SocketAddr::V4(addr).into()).map_err(err)?;
    Ok(socket.into())
}

/// The address peers should send to: an unspecified bind address is reached
/// over loopback.
fn reachable(socket: &UdpSocket) -> std::io::Result<SocketAddrV4> {
    match socket.local_addr()? {
        SocketAddr::V4(mut a) => {
            if a.ip().is_unspecified() {
                a.set_ip(Ipv4Addr::LOCALHOST);
            }
            Ok(a)
        }
        SocketAddr::V6(_) => Err(std::io::Error::other("IPv6 sockets are not supported")),
    }
}

fn ephemeral_near(peer: SocketAddrV4) -> SocketAddrV4 {
    let ip = if peer.ip().is_loopback() {
        Ipv4Addr::LOCALHOST
    } else {
        Ipv4Addr::UNSPECIFIED
    };
    SocketAddrV4::new(ip, 0)
}

/// Run `scenario` in real time over UDP and return its report.
pub fn run(scenario: &Scenario) -> Result<Report, RunError> {
    let errs = scenario.validate();
    if !errs.is_empty() {
        return Err(RunError::Invalid(errs));
    }
    let rates = scenario.rates().map_err(|e| RunError::Invalid(vec![e]))?;
    let table = scenario.table().map_err(|e| RunError::Invalid(vec![e]))?;

    // Bind everything first so ephemeral ports are known before any role starts.
    let edge_control = bind("edge control", scenario.edge.control_addr)?;
    let edge_addr = reachable(&edge_control)?;
    let mut ingress = Vec::new();
    let mut sensor_control = Vec::new();
    let mut sensor_data = Vec::new();
    for s in &scenario.sensors {
        let sock = bind_receiver(
            format!("stream {} ingress", s.stream_id),
            s.ingress_addr,
            scenario.edge.recv_buffer_bytes,
        )?;
        let target = reachable(&sock)?;
        ingress.push(sock);
        sensor_control.push(bind(format!("stream {} control", s.stream_id), s.control_addr)?);
        sensor_data.push((
            bind(format!("stream {} sender", s.stream_id), ephemeral_near(target))?,
            target,
        ));
    }
    let mut sink_data = Vec::new();
    let mut sink_control = Vec::new();
    for p in &scenario.processes {
        let data = bind_receiver(
            format!("process {} egress", p.process_id),
            p.egress_addr,
            scenario.edge.recv_buffer_bytes,
        )?;
        let egress = reachable(&data)?;
        sink_data.push((p.process_id, data, egress));
        sink_control.push(bind(
            format!("process {} control", p.process_id),
            ephemeral_near(edge_addr),
        )?);
    }

    let policy = Arc::new(SharedPolicy::new(PolicyMap::new()));
    let reconciler = Reconciler::new(scenario.sensor_descs(), rates, table, policy.clone());
    let registry = EgressRegistry::default();
    let started = Instant::now();

    let stop_sensors = Arc::new(AtomicBool::new(false));
    let stop_ingress = Arc::new(AtomicBool::new(false));
    let stop_control = Arc::new(AtomicBool::new(false));
    let stop_sinks = Arc::new(AtomicBool::new(false));

    let mut signals = BTreeMap::new();
    let mut sensors = Vec::new();
    let mut sensor_addrs = BTreeMap::new();
    for ((s, control), (data, target)) in scenario.sensors.iter().zip(sensor_control).zip(sensor_data) {
        let (tx, rx) = mpsc::channel();
        signals.insert(s.stream_id, tx);
        sensor_addrs.insert(s.stream_id, SocketAddr::V4(reachable(&control)?));
        let source = scenario.effective_source(s);
        let role = SensorRole {
            control: crate::sensor::SensorControl::new(s.stream_id, source.video_pids()),
            source: source
                .open(s.stream_id)
                .map_err(|e| RunError::Invalid(vec![e.to_string()]))?,
            fps: source.fps(),
            data,
            ingress: SocketAddr::V4(target),
            control_socket: control,
            signals: rx,
            started,
        };
        sensors.push(role.spawn(stop_sensors.clone())?);
    }

    let control = EdgeControl {
        socket: edge_control,
        reconciler,
        registry: registry.clone(),
        queue_capacity: scenario.edge.queue_capacity,
        sensor_control: sensor_addrs,
        sensor_signals: signals,
        egress_stop: Arc::new(AtomicBool::new(false)),
    }
    .spawn(stop_control.clone())?;

    let mut ingress_threads = Vec::new();
    for (i, (s, sock)) in scenario.sensors.iter().zip(ingress).enumerate() {
        let registry = registry.clone();
        let engine = EdgeEngine::new(
            IngressPort(i as u16 + 1),
            s.stream_id,
            policy.clone(),
            move |_, egress| registry.sender(egress),
        )
        .with_start(started);
        ingress_threads.push(spawn_ingress(sock, engine, stop_ingress.clone())?);
    }

    let mut sink_threads = Vec::new();
    let mut commands = BTreeMap::new();
    let mut sink_controls = Vec::new();
    for ((process, data, egress), socket) in sink_data.into_iter().zip(sink_control) {
        sink_threads.push((process, spawn_sink_data(process, data, stop_sinks.clone())?));
        let (tx, rx) = mpsc::channel();
        commands.insert(process, tx);
        sink_controls.push(
            SinkControl {
                process,
                egress,
                socket,
                edge: SocketAddr::V4(edge_addr),
                commands: rx,
            }
            .spawn()?,
        );
    }

    let operator = bind("operator", ephemeral_near(edge_addr))?;
    let mut book = ProcessBook::new(scenario);
    let execute = |steps: Vec<Step>| {
        for step in steps {
            match step {
                Step::Sink(p, cmd) => send_command(&commands, p, cmd),
                Step::Operator(m) => {
                    let stream = m.stream.0;
                    let msg = ControlMessage::PolicyUpdate(m);
                    let accept = |a: &crate::control::Ack| a.acked_type == TYPE_POLICY_UPDATE && a.key == stream;
                    match request(
                        &operator,
                        SocketAddr::V4(edge_addr),
                        &msg,
                        RetryPolicy::default(),
                        accept,
                    ) {
                        Ok(a) if a.status == AckStatus::Ok => {}
                        Ok(_) => log::warn!("operator update for stream {stream} rejected"),
                        Err(e) => log::warn!("operator update for stream {stream}: {e}"),
                    }
                }
            }
        }
    };
    execute(book.initial(scenario));

    let mut applied = Vec::new();
    let end = started + Duration::from_secs_f64(scenario.duration_s);
    for ev in &scenario.timeline {
        let at = started + Duration::from_secs_f64(ev.at_s);
        if at >= end {
            break;
        }
        thread::sleep(at.saturating_duration_since(Instant::now()));
        log::info!("timeline {:.3}s: {:?}", ev.at_s, ev.action);
        execute(book.apply(&ev.action));
        applied.push(TimelineEntry {
            at_s: ev.at_s,
            action: serde_json::to_string(&ev.action).unwrap_or_default(),
        });
    }
    thread::sleep(end.saturating_duration_since(Instant::now()));

    stop_sensors.store(true, Ordering::Release);
    let sensors: Vec<_> = sensors.into_iter().map(|t| t.join().expect("sensor thread")).collect();
    thread::sleep(DRAIN);
    stop_ingress.store(true, Ordering::Release);
    let engines: Vec<_> = ingress_threads
        .into_iter()
        .map(|t| t.join().expect("ingress thread"))
        .collect();
    thread::sleep(DRAIN);
    stop_control.store(true, Ordering::Release);
    let summary = control.join().expect("edge control thread");
    thread::sleep(DRAIN);
    stop_sinks.store(true, Ordering::Release);
    let sinks: BTreeMap<ProcessId, _> = sink_threads
        .into_iter()
        .map(|(p, t)| (p, t.join().expect("sink thread")))
        .collect();
    drop(commands);
    let mut control_log = summary.log;
    for t in sink_controls {
        let log = t.join().expect("sink control thread");
        control_log.unacked.extend(log.unanswered);
    }
    for (egress, stats) in &summary.egress_stats {
        if stats.send_errors > 0 {
            log::warn!("egress {egress}: {} send errors", stats.send_errors);
        }
    }

    Ok(assemble(RunState {
        scenario,
        sensors,
        engines,
        sinks,
        reconciler: &summary.reconciler,
        control: control_log,
        timeline: applied,
    }))
}

fn send_command(commands: &BTreeMap<ProcessId, mpsc::Sender<SinkCommand>>, p: ProcessId, cmd: SinkCommand) {
    if let Some(tx) = commands.get(&p) {
        let _ = tx.send(cmd);
    }
}
