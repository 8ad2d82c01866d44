//! Frame-class inference for TS packets.
//!
//! Only packets that start a PES unit on a video PID have payload bytes
//! inspected. Every other packet inherits the class of the frame it belongs to.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::packet::TsPacket;

/// Content class of one TS packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameClass {
    /// IDR slice or parameter set: never suppressed.
    Reference,
    /// Non-IDR slice: eligible for suppression.
    Differential,
    NonVideo,
    /// Video packet whose frame type could not be determined. Forwarded everywhere.
    Unknown,
}

impl FrameClass {
    pub const ALL: [FrameClass; 4] = [
        FrameClass::Reference,
        FrameClass::Differential,
        FrameClass::NonVideo,
        FrameClass::Unknown,
    ];

    pub fn index(self) -> usize {
        match self {
            FrameClass::Reference => 0,
            FrameClass::Differential => 1,
            FrameClass::NonVideo => 2,
            FrameClass::Unknown => 3,
        }
    }

    pub fn is_suppressible(self) -> bool {
        self == FrameClass::Differential
    }
}

/// Per-PID classification state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PidState {
    pub pid: u16,
    pub current_class: FrameClass,
    pub last_continuity: Option<u8>,
    pub is_video: bool,
    /// Number of PES starts seen on this PID.
    pub frame_index: u64,
}

impl PidState {
    pub fn new(pid: u16, is_video: bool) -> Self {
        PidState {
            pid,
            current_class: if is_video {
                FrameClass::Unknown
            } else {
                FrameClass::NonVideo
            },
            last_continuity: None,
            is_video,
            frame_index: 0,
        }
    }
}

/// Side observations from classifying one packet.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Observation {
    /// Payload bytes were read to classify this packet.
    pub inspected_payload: bool,
    /// A PES start whose frame type could not be found within the unit.
    pub unclassified_start: bool,
    pub continuity_gap: bool,
}

/// Classify `pkt` against `state`, returning the class and the successor state.
///
/// `pkt.pid` must equal `state.pid`.
pub fn classify_packet(state: &PidState, pkt: &TsPacket) -> (FrameClass, PidState, Observation) {
    debug_assert_eq!(state.pid, pkt.pid);
    let mut next = state.clone();
    let mut obs = Observation::default();

    if pkt.adaptation_control.has_payload() {
        if let Some(last) = state.last_continuity {
            let cc = pkt.continuity_counter;
            // A repeated counter is a legal duplicate packet.
            if cc != last && cc != (last + 1) & 0x0F {
                obs.continuity_gap = true;
            }
        }
        next.last_continuity = Some(pkt.continuity_counter);
    }

    if !state.is_video {
        next.current_class = FrameClass::NonVideo;
        return (FrameClass::NonVideo, next, obs);
    }
    if !pkt.pusi {
        return (state.current_class, next, obs);
    }

    next.frame_index = state.frame_index + 1;
    obs.inspected_payload = true;
    let class = if pkt.random_access == Some(true) {
        FrameClass::Reference
    } else {
        match first_picture_nal(pkt.payload()) {
            Some(5 | 7 | 8) => FrameClass::Reference,
            Some(_) => FrameClass::Differential,
            None => {
                obs.unclassified_start = true;
                FrameClass::Unknown
            }
        }
    };
    next.current_class = class;
    (class, next, obs)
}

/// Find the PES header of a video stream and return the type of the first
/// slice or parameter-set NAL unit that follows it within `payload`.
fn first_picture_nal(payload: &[u8]) -> Option<u8> {
    let pes =
        find_start_code(payload, 0).filter(|&p| p + 3 < payload.len() && (0xE0..=0xEF).contains(&payload[p + 3]))?;
    // 00 00 01 sid | len(2) | flags(2) | header_data_length | ...
    let hdl = *payload.get(pes + 8)? as usize;
    let mut pos = pes + 9 + hdl;
    while let Some(sc) = find_start_code(payload, pos) {
        let nal_type = *payload.get(sc + 3)? & 0x1F;
        match nal_type {
            1 | 5 | 7 | 8 => return Some(nal_type),
            _ => pos = sc + 3,
        }
    }
    None
}

/// Offset of the next `00 00 01` at or after `from`.
fn find_start_code(buf: &[u8], from: usize) -> Option<usize> {
    if buf.len() < 3 || from > buf.len() - 3 {
        return None;
    }
    buf[from..].windows(3).position(|w| w == [0, 0, 1]).map(|p| p + from)
}

/// Diagnostic totals kept by a [`Classifier`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassifierStats {
    pub packets: u64,
    pub payload_inspections: u64,
    pub unclassified_starts: u64,
    pub continuity_gaps: u64,
}

/// Classification state for one ingest path: a `PidState` per PID seen.
#[derive(Debug, Clone, Default)]
pub struct Classifier {
    video_pids: BTreeSet<u16>,
    pids: HashMap<u16, PidState>,
    stats: ClassifierStats,
}

impl Classifier {
    pub fn new(video_pids: impl IntoIterator<Item = u16>) -> Self {
        Classifier {
            video_pids: video_pids.into_iter().collect(),
            ..Default::default()
        }
    }

    pub fn video_pids(&self) -> &BTreeSet<u16> {
        &self.video_pids
    }

    /// Replace the video PID set. States of PIDs whose role changed are reset.
    pub fn set_video_pids(&mut self, video_pids: &BTreeSet<u16>) {
        if &self.video_pids != video_pids {
            self.video_pids = video_pids.clone();
            self.pids.retain(|pid, st| st.is_video == video_pids.contains(pid));
        }
    }

    pub fn classify(&mut self, pkt: &TsPacket) -> FrameClass {
        self.classify_observed(pkt).0
    }

    pub fn classify_observed(&mut self, pkt: &TsPacket) -> (FrameClass, Observation) {
        let is_video = self.video_pids.contains(&pkt.pid);
        let state = self
            .pids
            .entry(pkt.pid)
            .or_insert_with(|| PidState::new(pkt.pid, is_video));
        let (class, next, obs) = classify_packet(state, pkt);
        *state = next;

        self.stats.packets += 1;
        self.stats.payload_inspections += u64::from(obs.inspected_payload);
        self.stats.unclassified_starts += u64::from(obs.unclassified_start);
        self.stats.continuity_gaps += u64::from(obs.continuity_gap);
        (class, obs)
    }

    pub fn pid_state(&self, pid: u16) -> Option<&PidState> {
        self.pids.get(&pid)
    }

    pub fn stats(&self) -> ClassifierStats {
        self.stats
    }
}
