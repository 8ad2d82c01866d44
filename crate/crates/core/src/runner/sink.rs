//! A sink role: a computation process that registers its requirements and
//! counts what the edge delivers to it.

use std::collections::BTreeMap;
use std::net::{SocketAddr, SocketAddrV4, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::control::codec::{TYPE_POLICY_UPDATE, TYPE_SINK_REGISTER};
use crate::control::transport::{is_timeout, MAX_CONTROL_DATAGRAM};
use crate::control::{
    request, Ack, AckStatus, ControlMessage, Fixed16, RegisterAction, RetryPolicy, SinkRegister, SinkRequirement,
};
use crate::dpi::TS_PACKET_SIZE;
use crate::ids::{ProcessId, StreamId};
use crate::qoc::Requirement;
use crate::sensor::PacketTag;

const POLL: Duration = Duration::from_millis(20);

/// Packets received on one egress, by stream and frame.
#[derive(Debug, Clone, Default)]
pub(crate) struct SinkData {
    pub datagrams: u64,
    pub packets: u64,
    pub bytes: u64,
    /// Units without a synthetic tag.
    pub untagged: u64,
    /// Packets per (stream, frame index).
    pub frames: BTreeMap<StreamId, BTreeMap<u32, u32>>,
}

impl SinkData {
    pub(crate) fn receive(&mut self, datagram: &[u8]) {
        self.datagrams += 1;
        self.bytes += datagram.len() as u64;
        for unit in datagram.chunks_exact(TS_PACKET_SIZE) {
            self.packets += 1;
            match PacketTag::read(unit) {
                Some(t) => *self.frames.entry(t.stream).or_default().entry(t.frame).or_default() += 1,
                None => self.untagged += 1,
            }
        }
    }

    pub(crate) fn tagged(&self, stream: StreamId) -> u64 {
        self.frames
            .get(&stream)
            .map(|f| f.values().map(|&n| u64::from(n)).sum())
            .unwrap_or(0)
    }
}

pub(crate) fn spawn_sink_data(
    process: ProcessId,
    socket: UdpSocket,
    stop: Arc<AtomicBool>,
) -> std::io::Result<JoinHandle<SinkData>> {
    thread::Builder::new().name(format!("sink-{process}")).spawn(move || {
        let _ = socket.set_read_timeout(Some(POLL));
        let mut data = SinkData::default();
        let mut buf = vec![0u8; 65536];
        loop {
            match socket.recv_from(&mut buf) {
                Ok((n, _)) => data.receive(&buf[..n]),
                Err(e) if is_timeout(&e) => {
                    if stop.load(Ordering::Acquire) {
                        break;
                    }
                }
                Err(e) => {
                    log::warn!("process {process}: receive failed: {e}");
                    thread::sleep(POLL);
                }
            }
        }
        data
    })
}

#[derive(Debug, Clone)]
pub(crate) enum SinkCommand {
    Register(BTreeMap<StreamId, Requirement>),
    Deregister,
}

/// The registration message a sink sends for `cmd`.
pub(crate) fn sink_register(process: ProcessId, egress: SocketAddrV4, cmd: &SinkCommand) -> SinkRegister {
    let (action, requirements) = match cmd {
        SinkCommand::Register(reqs) => (
            RegisterAction::Register,
            reqs.iter()
                .map(|(&stream, r)| SinkRequirement {
                    stream,
                    strategy: r.strategy,
                    threshold: Fixed16::from_f64(r.threshold),
                })
                .collect(),
        ),
        SinkCommand::Deregister => (RegisterAction::Deregister, Vec::new()),
    };
    SinkRegister {
        process,
        action,
        egress,
        requirements,
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct SinkControlLog {
    pub rejected: Vec<String>,
    pub unanswered: Vec<String>,
    /// Last edge suppression the edge reported, per stream.
    pub deltas: BTreeMap<StreamId, f64>,
}

pub(crate) struct SinkControl {
    pub process: ProcessId,
    pub egress: SocketAddrV4,
    pub socket: UdpSocket,
    pub edge: SocketAddr,
    pub commands: Receiver<SinkCommand>,
}

impl SinkControl {
    pub(crate) fn spawn(self) -> std::io::Result<JoinHandle<SinkControlLog>> {
        thread::Builder::new()
            .name(format!("sink-control-{}", self.process))
            .spawn(move || self.run())
    }

    /// Runs until the command channel closes.
    fn run(self) -> SinkControlLog {
        let mut log = SinkControlLog::default();
        let _ = self.socket.set_read_timeout(Some(POLL));
        loop {
            match self.commands.recv_timeout(POLL) {
                Ok(cmd) => self.execute(cmd, &mut log),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
            self.drain_pushes(&mut log);
        }
        log
    }

    fn execute(&self, cmd: SinkCommand, log: &mut SinkControlLog) {
        let reg = sink_register(self.process, self.egress, &cmd);
        let action = reg.action;
        let msg = ControlMessage::SinkRegister(reg);
        let process = self.process.0;
        let accept = |a: &Ack| a.acked_type == TYPE_SINK_REGISTER && a.key == process;
        match request(&self.socket, self.edge, &msg, RetryPolicy::default(), accept) {
            Ok(ack) if ack.status == AckStatus::Ok => {
                log::info!(
                    "process {}: {action:?} acknowledged at version {}",
                    self.process,
                    ack.token
                )
            }
            Ok(_) => {
                log::warn!("process {}: {action:?} rejected by the edge", self.process);
                log.rejected
                    .push(format!("process {}: {action:?} rejected", self.process));
            }
            Err(e) => {
                log::warn!("process {}: {action:?}: {e}", self.process);
                log.unanswered
                    .push(format!("process {}: {action:?}: {e}", self.process));
            }
        }
    }

    /// Acknowledge policy pushes from the edge.
    fn drain_pushes(&self, log: &mut SinkControlLog) {
        let mut buf = [0u8; MAX_CONTROL_DATAGRAM];
        let _ = self.socket.set_read_timeout(Some(Duration::from_millis(1)));
        while let Ok((n, from)) = self.socket.recv_from(&mut buf) {
            let Ok(ControlMessage::PolicyUpdate(m)) = ControlMessage::decode(&buf[..n]) else {
                continue;
            };
            let mine = m.egresses.iter().find(|(e, _)| e.0 == self.process.0);
            let Some(&(_, delta)) = mine else { continue };
            log.deltas.insert(m.stream, delta.to_f64());
            let ack = ControlMessage::Ack(Ack {
                acked_type: TYPE_POLICY_UPDATE,
                status: AckStatus::Ok,
                key: m.stream.0,
                token: u32::from(delta.0),
            });
            if let Ok(bytes) = ack.encode() {
                let _ = self.socket.send_to(&bytes, from);
            }
        }
        let _ = self.socket.set_read_timeout(Some(POLL));
    }
}
