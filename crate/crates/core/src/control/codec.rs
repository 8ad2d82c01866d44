//! Bit-exact control message codec.
//!
//! Every message starts with `45 43` ("EC"), a version byte (1) and a type
//! byte. Bodies are fixed-layout little-endian:
//!
//! | type | message       | body                                                            |
//! |------|---------------|-----------------------------------------------------------------|
//! | 1    | QualityNotify | stream u16, keep u16                                            |
//! | 2    | PolicyUpdate  | stream u16, count u8, count × (egress u16, delta u16)           |
//! | 3    | SinkRegister  | process u16, action u8, ipv4 [4], port u16, count u8,           |
//! |      |               | count × (stream u16, strategy u8, threshold u16)                |
//! | 4    | Ack           | acked type u8, status u8, key u16, token u32                    |
//!
//! Fractions are 16-bit fixed point, value / 65535. Strategy is 0 = uniform,
//! 1 = differential. Action is 1 = register, 0 = deregister.

use std::net::{Ipv4Addr, SocketAddrV4};

use crate::ids::{EgressId, ProcessId, StreamId};
use crate::qoc::Strategy;

pub const MAGIC: [u8; 2] = [0x45, 0x43];
pub const VERSION: u8 = 1;

pub const TYPE_QUALITY_NOTIFY: u8 = 1;
pub const TYPE_POLICY_UPDATE: u8 = 2;
pub const TYPE_SINK_REGISTER: u8 = 3;
pub const TYPE_ACK: u8 = 4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 2]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("message truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid {field} value {value}")]
    BadField { field: &'static str, value: u8 },
    #[error("{0} entries do not fit an 8-bit count")]
    TooManyEntries(usize),
}

/// A fraction in [0, 1] as 16-bit fixed point (value / 65535).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fixed16(pub u16);

impl Fixed16 {
    pub const ONE: Fixed16 = Fixed16(u16::MAX);
    pub const ZERO: Fixed16 = Fixed16(0);

    /// Nearest representable value; input is clamped to [0, 1].
    pub fn from_f64(v: f64) -> Self {
        Fixed16((v.clamp(0.0, 1.0) * 65535.0).round() as u16)
    }

    pub fn to_f64(self) -> f64 {
        f64::from(self.0) / 65535.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QualityNotify {
    pub stream: StreamId,
    pub keep: Fixed16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyUpdateMsg {
    pub stream: StreamId,
    pub egresses: Vec<(EgressId, Fixed16)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegisterAction {
    Register,
    Deregister,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SinkRequirement {
    pub stream: StreamId,
    pub strategy: Strategy,
    pub threshold: Fixed16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SinkRegister {
    pub process: ProcessId,
    pub action: RegisterAction,
    /// Where the edge sends this process's datagrams.
    pub egress: SocketAddrV4,
    pub requirements: Vec<SinkRequirement>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckStatus {
    Ok,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ack {
    /// Type byte of the message being acknowledged.
    pub acked_type: u8,
    pub status: AckStatus,
    /// Stream id for notifications and updates, process id for registrations.
    pub key: u16,
    /// Registrations and policy updates: the map version committed for them.
    /// Notifications pushed by the edge: the fraction carried, echoed back, so
    /// a late ack for a superseded value is not mistaken for a fresh one.
    pub token: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlMessage {
    QualityNotify(QualityNotify),
    PolicyUpdate(PolicyUpdateMsg),
    SinkRegister(SinkRegister),
    Ack(Ack),
}

impl ControlMessage {
    pub fn type_byte(&self) -> u8 {
        match self {
            ControlMessage::QualityNotify(_) => TYPE_QUALITY_NOTIFY,
            ControlMessage::PolicyUpdate(_) => TYPE_POLICY_UPDATE,
            ControlMessage::SinkRegister(_) => TYPE_SINK_REGISTER,
            ControlMessage::Ack(_) => TYPE_ACK,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let mut out = Vec::with_capacity(16);
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.type_byte());
        match self {
            ControlMessage::QualityNotify(m) => {
                put_u16(&mut out, m.stream.0);
                put_u16(&mut out, m.keep.0);
            }
            ControlMessage::PolicyUpdate(m) => {
                put_u16(&mut out, m.stream.0);
                out.push(count(m.egresses.len())?);
                for (egress, delta) in &m.egresses {
                    put_u16(&mut out, egress.0);
                    put_u16(&mut out, delta.0);
                }
            }
            ControlMessage::SinkRegister(m) => {
                put_u16(&mut out, m.process.0);
                out.push(match m.action {
                    RegisterAction::Deregister => 0,
                    RegisterAction::Register => 1,
                });
                out.extend_from_slice(&m.egress.ip().octets());
                put_u16(&mut out, m.egress.port());
                out.push(count(m.requirements.len())?);
                for r in &m.requirements {
                    put_u16(&mut out, r.stream.0);
                    out.push(match r.strategy {
                        Strategy::Uniform => 0,
                        Strategy::Differential => 1,
                    });
                    put_u16(&mut out, r.threshold.0);
                }
            }
            ControlMessage::Ack(m) => {
                out.push(m.acked_type);
                out.push(match m.status {
                    AckStatus::Ok => 0,
                    AckStatus::Rejected => 1,
                });
                put_u16(&mut out, m.key);
                out.extend_from_slice(&m.token.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Self, CodecError> {
        if buf.first().is_some_and(|&b| b != MAGIC[0]) {
            return Err(CodecError::BadMagic([buf[0], buf.get(1).copied().unwrap_or(0)]));
        }
        let mut r = Reader { buf, pos: 0 };
        let magic = [r.u8()?, r.u8()?];
        if magic != MAGIC {
            return Err(CodecError::BadMagic(magic));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(CodecError::BadVersion(version));
        }
        let msg = match r.u8()? {
            TYPE_QUALITY_NOTIFY => {
                r.need(4)?;
                ControlMessage::QualityNotify(QualityNotify {
                    stream: StreamId(r.u16()?),
                    keep: Fixed16(r.u16()?),
                })
            }
            TYPE_POLICY_UPDATE => {
                r.need(3)?;
                let stream = StreamId(r.u16()?);
                let n = r.u8()? as usize;
                r.need(4 * n)?;
                let egresses = (0..n)
                    .map(|_| Ok((EgressId(r.u16()?), Fixed16(r.u16()?))))
                    .collect::<Result<_, CodecError>>()?;
                ControlMessage::PolicyUpdate(PolicyUpdateMsg { stream, egresses })
            }
            TYPE_SINK_REGISTER => {
                r.need(10)?;
                let process = ProcessId(r.u16()?);
                let action = match r.u8()? {
                    0 => RegisterAction::Deregister,
                    1 => RegisterAction::Register,
                    value => return Err(CodecError::BadField { field: "action", value }),
                };
                let ip = Ipv4Addr::new(r.u8()?, r.u8()?, r.u8()?, r.u8()?);
                let egress = SocketAddrV4::new(ip, r.u16()?);
                let n = r.u8()? as usize;
                r.need(5 * n)?;
                let requirements = (0..n)
                    .map(|_| {
                        let stream = StreamId(r.u16()?);
                        let strategy = match r.u8()? {
                            0 => Strategy::Uniform,
                            1 => Strategy::Differential,
                            value => {
                                return Err(CodecError::BadField {
                                    field: "strategy",
                                    value,
                                })
                            }
                        };
                        Ok(SinkRequirement {
                            stream,
                            strategy,
                            threshold: Fixed16(r.u16()?),
                        })
                    })
                    .collect::<Result<_, CodecError>>()?;
                ControlMessage::SinkRegister(SinkRegister {
                    process,
                    action,
                    egress,
                    requirements,
                })
            }
            TYPE_ACK => {
                r.need(8)?;
                let acked_type = r.u8()?;
                let status = match r.u8()? {
                    0 => AckStatus::Ok,
                    1 => AckStatus::Rejected,
                    value => return Err(CodecError::BadField { field: "status", value }),
                };
                ControlMessage::Ack(Ack {
                    acked_type,
                    status,
                    key: r.u16()?,
                    token: r.u32()?,
                })
            }
            other => return Err(CodecError::UnknownType(other)),
        };
        if r.pos != buf.len() {
            return Err(CodecError::TrailingBytes(buf.len() - r.pos));
        }
        Ok(msg)
    }
}

fn count(n: usize) -> Result<u8, CodecError> {
    u8::try_from(n).map_err(|_| CodecError::TooManyEntries(n))
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    /// Fail with the full expected length if fewer than `n` bytes remain.
    fn need(&self, n: usize) -> Result<(), CodecError> {
        if self.buf.len() - self.pos < n {
            Err(CodecError::Truncated {
                needed: self.pos + n,
                have: self.buf.len(),
            })
        } else {
            Ok(())
        }
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        self.need(1)?;
        self.pos += 1;
        Ok(self.buf[self.pos - 1])
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        self.need(2)?;
        let v = u16::from_le_bytes([self.buf[self.pos], self.buf[self.pos + 1]]);
        self.pos += 2;
        Ok(v)
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        self.need(4)?;
        let v = u32::from_le_bytes(self.buf[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }
}
