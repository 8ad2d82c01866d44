//! Transport-stream deep packet inspection.

mod classify;
mod packet;
mod psi;

pub use classify::{classify_packet, Classifier, ClassifierStats, FrameClass, Observation, PidState};
pub use packet::{
    parse_ts_packet, scan_datagram, AdaptationControl, TsPacket, MAX_UNITS_PER_DATAGRAM, SYNC_BYTE, TS_PACKET_SIZE,
};
pub use psi::find_video_pids;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DpiError {
    #[error("TS unit must be 188 bytes, got {0}")]
    WrongLength(usize),
    #[error("sync loss in unit {index}: found {found:#04x}")]
    SyncLoss { index: usize, found: u8 },
    #[error("adaptation field length {adaptation_length} overruns the unit")]
    Malformed { adaptation_length: usize },
    #[error("datagram length {0} is not a positive multiple of 188")]
    BadFraming(usize),
}
