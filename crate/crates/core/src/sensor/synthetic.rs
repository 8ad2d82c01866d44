//! Deterministic synthetic H.264-in-TS streams.
//!
//! Each stream starts with a PAT/PMT pair, then repeats GOPs of one IDR frame
//! followed by `gop_length - 1` non-IDR frames. Every video unit carries a
//! trailing [`PacketTag`] so receivers can rebuild the frame ledger exactly.

use std::collections::HashMap;

use bytes::Bytes;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dpi::{FrameClass, SYNC_BYTE, TS_PACKET_SIZE};
use crate::ids::StreamId;
use crate::qoc::StreamRate;

pub const DEFAULT_VIDEO_PID: u16 = 0x100;
pub const DEFAULT_PMT_PID: u16 = 0x1000;

const TAG_LEN: usize = 10;
const TAG_MAGIC: [u8; 2] = [0xEC, 0x5A];
const TS_BITS: f64 = (TS_PACKET_SIZE * 8) as f64;

fn default_multiplier() -> f64 {
    1.0
}
fn default_video_pid() -> u16 {
    DEFAULT_VIDEO_PID
}
fn default_pmt_pid() -> u16 {
    DEFAULT_PMT_PID
}

/// Shape of a synthetic stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Frames per GOP, including the reference frame.
    pub gop_length: u32,
    /// TS units per differential frame.
    pub packets_per_frame: u32,
    /// Reference frames span `packets_per_frame * multiplier` units (rounded, at least 1).
    #[serde(default = "default_multiplier")]
    pub reference_size_multiplier: f64,
    pub fps: f64,
    #[serde(default = "default_video_pid")]
    pub video_pid: u16,
    #[serde(default = "default_pmt_pid")]
    pub pmt_pid: u16,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(gop_length: u32, packets_per_frame: u32, fps: f64) -> Self {
        SyntheticSpec {
            gop_length,
            packets_per_frame,
            reference_size_multiplier: 1.0,
            fps,
            video_pid: DEFAULT_VIDEO_PID,
            pmt_pid: DEFAULT_PMT_PID,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.gop_length < 1 {
            return Err("gop_length must be at least 1".into());
        }
        if self.packets_per_frame < 1 {
            return Err("packets_per_frame must be at least 1".into());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(format!("fps must be positive, got {}", self.fps));
        }
        if !(self.reference_size_multiplier > 0.0 && self.reference_size_multiplier.is_finite()) {
            return Err("reference_size_multiplier must be positive".into());
        }
        for pid in [self.video_pid, self.pmt_pid] {
            if pid == 0 || pid > 0x1FFE {
                return Err(format!("PID {pid:#x} is reserved or out of range"));
            }
        }
        if self.video_pid == self.pmt_pid {
            return Err("video and PMT PIDs must differ".into());
        }
        Ok(())
    }

    pub fn reference_packets(&self) -> u32 {
        ((f64::from(self.packets_per_frame) * self.reference_size_multiplier).round() as u32).max(1)
    }

    pub fn frame_packets(&self, class: FrameClass) -> u32 {
        match class {
            FrameClass::Reference => self.reference_packets(),
            _ => self.packets_per_frame,
        }
    }

    pub fn class_of_frame(&self, frame_index: u64) -> FrameClass {
        if frame_index.is_multiple_of(u64::from(self.gop_length)) {
            FrameClass::Reference
        } else {
            FrameClass::Differential
        }
    }

    /// Long-run bit rates, ignoring the one-off PSI pair.
    pub fn rate(&self) -> StreamRate {
        let gops_per_sec = self.fps / f64::from(self.gop_length);
        let diff_units = f64::from(self.gop_length - 1) * f64::from(self.packets_per_frame);
        StreamRate::new(
            f64::from(self.reference_packets()) * TS_BITS * gops_per_sec,
            diff_units * TS_BITS * gops_per_sec,
        )
    }
}

/// Identifies a synthetic video unit: which stream, frame and position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PacketTag {
    pub stream: StreamId,
    pub frame: u32,
    pub packet: u16,
}

impl PacketTag {
    fn write(&self, unit: &mut [u8]) {
        let t = &mut unit[TS_PACKET_SIZE - TAG_LEN..];
        t[..2].copy_from_slice(&TAG_MAGIC);
        t[2..4].copy_from_slice(&self.stream.0.to_le_bytes());
        t[4..8].copy_from_slice(&self.frame.to_le_bytes());
        t[8..10].copy_from_slice(&self.packet.to_le_bytes());
    }

    /// Read the tag of a synthetic video unit.
    pub fn read(unit: &[u8]) -> Option<PacketTag> {
        if unit.len() != TS_PACKET_SIZE {
            return None;
        }
        let t = &unit[TS_PACKET_SIZE - TAG_LEN..];
        (t[..2] == TAG_MAGIC).then(|| PacketTag {
            stream: StreamId(u16::from_le_bytes([t[2], t[3]])),
            frame: u32::from_le_bytes(t[4..8].try_into().unwrap()),
            packet: u16::from_le_bytes([t[8], t[9]]),
        })
    }
}

/// One generated frame.
#[derive(Debug, Clone)]
pub struct SyntheticFrame {
    pub index: u64,
    pub class: FrameClass,
    pub units: Vec<Bytes>,
}

/// Endless frame source for a [`SyntheticSpec`].
pub struct SyntheticStream {
    spec: SyntheticSpec,
    stream: StreamId,
    next_frame: u64,
    continuity: HashMap<u16, u8>,
    rng: ChaCha8Rng,
}

impl SyntheticStream {
    pub fn new(stream: StreamId, spec: SyntheticSpec) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (u64::from(stream.0) << 32));
        SyntheticStream {
            spec,
            stream,
            next_frame: 0,
            continuity: HashMap::new(),
            rng,
        }
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    fn next_cc(&mut self, pid: u16) -> u8 {
        let cc = self.continuity.entry(pid).or_insert(0x0F);
        *cc = (*cc + 1) & 0x0F;
        *cc
    }

    fn header(&mut self, pid: u16, pusi: bool) -> [u8; 4] {
        let cc = self.next_cc(pid);
        [
            SYNC_BYTE,
            (u8::from(pusi) << 6) | (pid >> 8) as u8,
            pid as u8,
            0x10 | cc,
        ]
    }

    fn psi_unit(&mut self, pid: u16, section: &[u8]) -> Bytes {
        let mut unit = vec![0xFFu8; TS_PACKET_SIZE];
        unit[..4].copy_from_slice(&self.header(pid, true));
        unit[4] = 0; // pointer field
        unit[5..5 + section.len()].copy_from_slice(section);
        Bytes::from(unit)
    }

    /// The PAT and PMT announcing one H.264 program.
    pub fn psi(&mut self) -> Vec<Bytes> {
        let pmt = self.spec.pmt_pid;
        let video = self.spec.video_pid;
        let pat = psi_section(0x00, 0x0001, &[0x00, 0x01, 0xE0 | (pmt >> 8) as u8, pmt as u8]);
        let pmt_body = [
            0xE0 | (video >> 8) as u8,
            video as u8, // PCR PID
            0xF0,
            0x00, // program info length
            0x1B, // H.264
            0xE0 | (video >> 8) as u8,
            video as u8,
            0xF0,
            0x00,
        ];
        let pmt_section = psi_section(0x02, 0x0001, &pmt_body);
        vec![self.psi_unit(0, &pat), self.psi_unit(pmt, &pmt_section)]
    }

    pub fn next_frame(&mut self) -> SyntheticFrame {
        let index = self.next_frame;
        self.next_frame += 1;
        let class = self.spec.class_of_frame(index);
        let count = self.spec.frame_packets(class);
        let pid = self.spec.video_pid;

        let units = (0..count)
            .map(|k| {
                let mut unit = [0u8; TS_PACKET_SIZE];
                let header = self.header(pid, k == 0);
                unit[..4].copy_from_slice(&header);
                self.rng.fill_bytes(&mut unit[4..]);
                if k == 0 {
                    let start = frame_start(class);
                    unit[4..4 + start.len()].copy_from_slice(&start);
                }
                PacketTag {
                    stream: self.stream,
                    frame: index as u32,
                    packet: k as u16,
                }
                .write(&mut unit);
                Bytes::copy_from_slice(&unit)
            })
            .collect();
        SyntheticFrame { index, class, units }
    }
}

/// PES header plus the leading NAL units of a frame.
fn frame_start(class: FrameClass) -> Vec<u8> {
    // 00 00 01 E0 | PES length 0 | '10' flags, PTS only | header length 5 | PTS
    let mut b = vec![0, 0, 1, 0xE0, 0, 0, 0x80, 0x80, 5, 0x21, 0, 1, 0, 1];
    b.extend_from_slice(&[0, 0, 0, 1, 0x09, 0xF0]); // access unit delimiter
    match class {
        FrameClass::Reference => {
            b.extend_from_slice(&[0, 0, 0, 1, 0x67, 0x42, 0xC0, 0x1E]); // SPS
            b.extend_from_slice(&[0, 0, 0, 1, 0x68, 0xCE, 0x3C, 0x80]); // PPS
            b.extend_from_slice(&[0, 0, 1, 0x65, 0x88, 0x84]); // IDR slice
        }
        _ => b.extend_from_slice(&[0, 0, 1, 0x41, 0x9A, 0x02]), // non-IDR slice
    }
    b
}

/// A long-form PSI section with version 0, current, section 0 of 0.
fn psi_section(table_id: u8, table_ext: u16, body: &[u8]) -> Vec<u8> {
    let section_length = 5 + body.len() + 4;
    let mut s = vec![
        table_id,
        0xB0 | (section_length >> 8) as u8,
        section_length as u8,
        (table_ext >> 8) as u8,
        table_ext as u8,
        0xC1,
        0x00,
        0x00,
    ];
    s.extend_from_slice(body);
    let crc = crc32_mpeg2(&s);
    s.extend_from_slice(&crc.to_be_bytes());
    s
}

/// CRC-32/MPEG-2 as used by PSI sections.
pub fn crc32_mpeg2(data: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &byte in data {
        crc ^= u32::from(byte) << 24;
        for _ in 0..8 {
            crc = if crc & 0x8000_0000 != 0 {
                (crc << 1) ^ 0x04C1_1DB7
            } else {
                crc << 1
            };
        }
    }
    crc
}

/// The PSI pair followed by `frames` frames, as one unit sequence.
pub fn generate_synthetic(stream: StreamId, spec: &SyntheticSpec, frames: u64) -> Vec<Bytes> {
    let mut gen = SyntheticStream::new(stream, spec.clone());
    let mut units = gen.psi();
    for _ in 0..frames {
        units.extend(gen.next_frame().units);
    }
    units
}
