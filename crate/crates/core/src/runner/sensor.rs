//! A sensor role: paced transmission of one stream at the notified quality.

use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::Receiver;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use bytes::Bytes;

use crate::control::codec::TYPE_QUALITY_NOTIFY;
use crate::control::transport::{is_timeout, MAX_CONTROL_DATAGRAM};
use crate::control::{Ack, AckStatus, ControlMessage};
use crate::dpi::TS_PACKET_SIZE;
use crate::sensor::{pack_datagrams, FrameSource, SensorControl};

/// Datagrams sent back to back before yielding to the pacer.
const BURST: usize = 32;
/// A sender further behind than this skips ahead instead of catching up.
const MAX_LAG: Duration = Duration::from_secs(1);

/// Out-of-band start/stop from the edge when a stream gains or loses its
/// last consumer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SensorSignal {
    Pause,
    Resume,
}

pub(crate) struct SensorRole {
    pub control: SensorControl,
    pub source: Box<dyn FrameSource>,
    pub fps: f64,
    pub data: UdpSocket,
    pub ingress: SocketAddr,
    pub control_socket: UdpSocket,
    pub signals: Receiver<SensorSignal>,
    pub started: Instant,
}

pub(crate) struct SensorOutcome {
    pub control: SensorControl,
    pub paused: bool,
    pub notifications: u64,
    pub send_errors: u64,
}

impl SensorRole {
    pub(crate) fn spawn(self, stop: Arc<AtomicBool>) -> std::io::Result<JoinHandle<SensorOutcome>> {
        thread::Builder::new()
            .name(format!("sensor-{}", self.control.stream()))
            .spawn(move || self.run(&stop))
    }

    fn run(mut self, stop: &AtomicBool) -> SensorOutcome {
        let _ = self.control_socket.set_nonblocking(true);
        let interval = Duration::from_secs_f64(1.0 / self.fps);
        let mut out = SensorOutcome {
            control: SensorControl::new(self.control.stream(), []),
            paused: true,
            notifications: 0,
            send_errors: 0,
        };
        let mut next_at = Instant::now();
        while !stop.load(Ordering::Acquire) {
            self.drain_control(&mut out);
            for s in self.signals.try_iter() {
                out.paused = s == SensorSignal::Pause;
            }
            if out.paused {
                thread::sleep(Duration::from_millis(5));
                next_at = Instant::now();
                continue;
            }
            let Some(units) = self.source.next_frame() else {
                thread::sleep(Duration::from_millis(5));
                continue;
            };
            let kept = match self.control.sensor_control(&units) {
                Ok(k) => k,
                Err(e) => {
                    log::warn!("stream {}: unparseable source unit: {e}", self.control.stream());
                    continue;
                }
            };
            let elapsed = self.started.elapsed();
            let counters = self.control.counters_mut();
            counters.rate_in.record(elapsed, (units.len() * TS_PACKET_SIZE) as u64);
            counters.rate.record(elapsed, (kept.len() * TS_PACKET_SIZE) as u64);

            next_at += interval;
            self.send_paced(&pack_datagrams(&kept), next_at, &mut out);
            let now = Instant::now();
            if now > next_at + MAX_LAG {
                log::warn!("stream {}: sender fell behind; skipping ahead", self.control.stream());
                next_at = now;
            } else if next_at > now {
                thread::sleep(next_at - now);
            }
        }
        out.control = self.control;
        out
    }

    /// Spread a frame's datagrams over the time left until `deadline`.
    fn send_paced(&mut self, datagrams: &[Bytes], deadline: Instant, out: &mut SensorOutcome) {
        let bursts = datagrams.len().div_ceil(BURST).max(1);
        for (i, chunk) in datagrams.chunks(BURST).enumerate() {
            for d in chunk {
                match self.data.send_to(d, self.ingress) {
                    Ok(_) => self.control.counters_mut().datagrams_out += 1,
                    Err(e) => {
                        out.send_errors += 1;
                        log::debug!("stream {}: send failed: {e}", self.control.stream());
                    }
                }
            }
            let left = bursts - i - 1;
            if left > 0 {
                let now = Instant::now();
                if deadline > now {
                    thread::sleep((deadline - now) / (left as u32 + 1));
                }
            }
        }
    }

    fn drain_control(&mut self, out: &mut SensorOutcome) {
        let mut buf = [0u8; MAX_CONTROL_DATAGRAM];
        loop {
            let (n, from) = match self.control_socket.recv_from(&mut buf) {
                Ok(r) => r,
                Err(e) if is_timeout(&e) => return,
                Err(e) => {
                    log::warn!("stream {}: control receive failed: {e}", self.control.stream());
                    return;
                }
            };
            let msg = match ControlMessage::decode(&buf[..n]) {
                Ok(ControlMessage::QualityNotify(m)) => m,
                Ok(other) => {
                    log::debug!("stream {}: ignoring {other:?}", self.control.stream());
                    continue;
                }
                Err(e) => {
                    log::warn!("stream {}: bad control message from {from}: {e}", self.control.stream());
                    continue;
                }
            };
            let status = match self.control.handle_quality_notify(&msg) {
                Ok(()) => {
                    out.notifications += 1;
                    log::info!("stream {}: quality keep {:.4}", msg.stream, msg.keep.to_f64());
                    AckStatus::Ok
                }
                Err(e) => {
                    log::warn!("{e}");
                    AckStatus::Rejected
                }
            };
            let ack = ControlMessage::Ack(Ack {
                acked_type: TYPE_QUALITY_NOTIFY,
                status,
                key: msg.stream.0,
                token: u32::from(msg.keep.0),
            });
            if let Ok(bytes) = ack.encode() {
                let _ = self.control_socket.send_to(&bytes, from);
            }
        }
    }
}
