//! Datagram delivery with acknowledgement and bounded retry.

use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::time::{Duration, Instant};

use super::codec::{Ack, ControlMessage};

/// Largest control message we expect: a registration with 255 requirements.
pub const MAX_CONTROL_DATAGRAM: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub spacing: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            spacing: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("no acknowledgement after {0} attempts")]
    NoAck(u32),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Codec(#[from] super::codec::CodecError),
}

/// What an outstanding message waits for: the acked type, key and token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AckKey {
    pub acked_type: u8,
    pub key: u16,
    pub token: u32,
}

impl AckKey {
    pub fn matches(&self, ack: &Ack) -> bool {
        ack.acked_type == self.acked_type && ack.key == self.key && ack.token == self.token
    }
}

#[derive(Debug, Clone)]
struct Outstanding {
    dest: SocketAddr,
    bytes: Vec<u8>,
    expect: AckKey,
    sent: u32,
    next_at: Instant,
}

/// A message that exhausted its attempts without an acknowledgement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unacked {
    pub dest: SocketAddr,
    pub expect: AckKey,
}

/// Non-blocking retry bookkeeping for a socket that also serves other traffic.
///
/// A new message to the same destination with the same type and key
/// supersedes the one still waiting.
#[derive(Debug, Default)]
pub struct RetryQueue {
    policy: RetryPolicy,
    outstanding: Vec<Outstanding>,
    flagged: Vec<Unacked>,
}

impl RetryQueue {
    pub fn new(policy: RetryPolicy) -> Self {
        RetryQueue {
            policy,
            ..Default::default()
        }
    }

    /// Queue a message and return its first transmission.
    pub fn push(
        &mut self,
        dest: SocketAddr,
        msg: &ControlMessage,
        expect: AckKey,
        now: Instant,
    ) -> Result<(SocketAddr, Vec<u8>), TransportError> {
        let bytes = msg.encode()?;
        self.outstanding
            .retain(|o| !(o.dest == dest && o.expect.acked_type == expect.acked_type && o.expect.key == expect.key));
        self.outstanding.push(Outstanding {
            dest,
            bytes: bytes.clone(),
            expect,
            sent: 1,
            next_at: now + self.policy.spacing,
        });
        Ok((dest, bytes))
    }

    /// Settle the outstanding message this ack answers. Returns whether one matched.
    pub fn acknowledge(&mut self, from: SocketAddr, ack: &Ack) -> bool {
        let before = self.outstanding.len();
        self.outstanding.retain(|o| !(o.dest == from && o.expect.matches(ack)));
        self.outstanding.len() != before
    }

    /// Retransmissions due at `now`. Messages out of attempts are flagged.
    pub fn due(&mut self, now: Instant) -> Vec<(SocketAddr, Vec<u8>)> {
        let mut resend = Vec::new();
        let policy = self.policy;
        let flagged = &mut self.flagged;
        self.outstanding.retain_mut(|o| {
            if o.next_at > now {
                return true;
            }
            if o.sent >= policy.attempts {
                log::warn!("no ack from {} for {:?} after {} attempts", o.dest, o.expect, o.sent);
                flagged.push(Unacked {
                    dest: o.dest,
                    expect: o.expect,
                });
                return false;
            }
            o.sent += 1;
            o.next_at = now + policy.spacing;
            resend.push((o.dest, o.bytes.clone()));
            true
        });
        resend
    }

    pub fn next_deadline(&self) -> Option<Instant> {
        self.outstanding.iter().map(|o| o.next_at).min()
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding.len()
    }

    pub fn flagged(&self) -> &[Unacked] {
        &self.flagged
    }
}

/// Send `msg` and block until an ack satisfying `accept` arrives, retrying
/// per `policy`. Other datagrams received meanwhile are discarded.
pub fn request(
    socket: &UdpSocket,
    dest: SocketAddr,
    msg: &ControlMessage,
    policy: RetryPolicy,
    accept: impl Fn(&Ack) -> bool,
) -> Result<Ack, TransportError> {
    let bytes = msg.encode()?;
    let previous_timeout = socket.read_timeout()?;
    let mut buf = [0u8; MAX_CONTROL_DATAGRAM];
    let result = (|| {
        for _ in 0..policy.attempts {
            socket.send_to(&bytes, dest)?;
            let deadline = Instant::now() + policy.spacing;
            loop {
                let left = deadline.saturating_duration_since(Instant::now());
                if left.is_zero() {
                    break;
                }
                socket.set_read_timeout(Some(left))?;
                match socket.recv_from(&mut buf) {
                    Ok((n, from)) if from == dest => {
                        if let Ok(ControlMessage::Ack(ack)) = ControlMessage::decode(&buf[..n]) {
                            if accept(&ack) {
                                return Ok(ack);
                            }
                        }
                    }
                    Ok(_) => {}
                    Err(e) if is_timeout(&e) => break,
                    Err(e) => return Err(e.into()),
                }
            }
        }
        Err(TransportError::NoAck(policy.attempts))
    })();
    socket.set_read_timeout(previous_timeout)?;
    result
}

pub fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::codec::{AckStatus, Fixed16, QualityNotify, TYPE_QUALITY_NOTIFY};
    use crate::ids::StreamId;
    use std::thread;

    fn notify(keep: f64) -> ControlMessage {
        ControlMessage::QualityNotify(QualityNotify {
            stream: StreamId(1),
            keep: Fixed16::from_f64(keep),
        })
    }

    fn key(token: u32) -> AckKey {
        AckKey {
            acked_type: TYPE_QUALITY_NOTIFY,
            key: 1,
            token,
        }
    }

    fn ack(token: u32) -> Ack {
        Ack {
            acked_type: TYPE_QUALITY_NOTIFY,
            status: AckStatus::Ok,
            key: 1,
            token,
        }
    }

    #[test]
    fn three_attempts_then_flagged() {
        let dest: SocketAddr = "127.0.0.1:9".parse().unwrap();
        let t0 = Instant::now();
        let mut q = RetryQueue::new(RetryPolicy::default());
        q.push(dest, &notify(0.5), key(7), t0).unwrap();
        assert!(q.due(t0 + Duration::from_millis(499)).is_empty());
        assert_eq!(q.due(t0 + Duration::from_millis(500)).len(), 1);
        assert_eq!(q.due(t0 + Duration::from_millis(1000)).len(), 1);
        assert!(q.flagged().is_empty());
        assert!(q.due(t0 + Duration::from_millis(1500)).is_empty());
        assert_eq!(q.flagged().len(), 1);
        assert_eq!(q.outstanding(), 0);
    }

    #[test]
    fn ack_settles_and_stale_ack_does_not() {
        let dest: SocketAddr = "127.0.0.1:9".parse().unwrap();
        let now = Instant::now();
        let mut q = RetryQueue::new(RetryPolicy::default());
        q.push(dest, &notify(0.5), key(1), now).unwrap();
        q.push(dest, &notify(0.7), key(2), now).unwrap();
        assert_eq!(q.outstanding(), 1);
        assert!(!q.acknowledge(dest, &ack(1)));
        assert!(!q.acknowledge("127.0.0.1:10".parse().unwrap(), &ack(2)));
        assert!(q.acknowledge(dest, &ack(2)));
        assert_eq!(q.next_deadline(), None);
    }

    #[test]
    fn blocking_request_retries_until_ack() {
        let server = UdpSocket::bind("127.0.0.1:0").unwrap();
        let client = UdpSocket::bind("127.0.0.1:0").unwrap();
        let server_addr = server.local_addr().unwrap();
        let responder = thread::spawn(move || {
            let mut buf = [0u8; 64];
            // Ignore the first attempt, answer the second.
            server.recv_from(&mut buf).unwrap();
            let (_, from) = server.recv_from(&mut buf).unwrap();
            server
                .send_to(&ControlMessage::Ack(ack(3)).encode().unwrap(), from)
                .unwrap();
        });
        let policy = RetryPolicy {
            attempts: 3,
            spacing: Duration::from_millis(100),
        };
        let got = request(&client, server_addr, &notify(1.0), policy, |a| a.token == 3).unwrap();
        assert_eq!(got, ack(3));
        responder.join().unwrap();

        let silent = UdpSocket::bind("127.0.0.1:0").unwrap();
        let err = request(&client, silent.local_addr().unwrap(), &notify(1.0), policy, |_| true);
        assert!(matches!(err, Err(TransportError::NoAck(3))));
    }
}
