//! Where a sensor's TS units come from: the synthetic generator or a raw
//! capture file.

use std::io;
use std::path::{Path, PathBuf};

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use super::synthetic::{SyntheticSpec, SyntheticStream};
use crate::dpi::{parse_ts_packet, scan_datagram, Classifier, DpiError, FrameClass, TS_PACKET_SIZE};
use crate::ids::StreamId;
use crate::qoc::StreamRate;

fn default_fps() -> f64 {
    25.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamSource {
    Synthetic(SyntheticSpec),
    /// A file of concatenated 188-byte units, paced one video frame per `1/fps`.
    Replay {
        path: PathBuf,
        video_pids: Vec<u16>,
        #[serde(default = "default_fps")]
        fps: f64,
        #[serde(default = "default_true")]
        looped: bool,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum SourceError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Ts { path: PathBuf, source: DpiError },
    #[error("{path}: no video frames on PIDs {pids:?}")]
    NoFrames { path: PathBuf, pids: Vec<u16> },
    #[error("invalid source: {0}")]
    Invalid(String),
}

impl StreamSource {
    pub fn video_pids(&self) -> Vec<u16> {
        match self {
            StreamSource::Synthetic(spec) => vec![spec.video_pid],
            StreamSource::Replay { video_pids, .. } => video_pids.clone(),
        }
    }

    pub fn fps(&self) -> f64 {
        match self {
            StreamSource::Synthetic(spec) => spec.fps,
            StreamSource::Replay { fps, .. } => *fps,
        }
    }

    pub fn validate(&self) -> Result<(), SourceError> {
        match self {
            StreamSource::Synthetic(spec) => spec.validate().map_err(SourceError::Invalid),
            StreamSource::Replay { video_pids, fps, .. } => {
                if video_pids.is_empty() {
                    return Err(SourceError::Invalid("replay needs at least one video PID".into()));
                }
                if !(*fps > 0.0 && fps.is_finite()) {
                    return Err(SourceError::Invalid(format!("fps must be positive, got {fps}")));
                }
                Ok(())
            }
        }
    }

    pub fn open(&self, stream: StreamId) -> Result<Box<dyn FrameSource>, SourceError> {
        self.validate()?;
        Ok(match self {
            StreamSource::Synthetic(spec) => Box::new(SyntheticFrames {
                started: false,
                gen: SyntheticStream::new(stream, spec.clone()),
            }),
            StreamSource::Replay {
                path,
                video_pids,
                looped,
                ..
            } => Box::new(ReplayFrames::load(path, video_pids, *looped)?),
        })
    }

    /// Long-run reference/differential bit rates of this source at full quality.
    pub fn rate(&self) -> Result<StreamRate, SourceError> {
        match self {
            StreamSource::Synthetic(spec) => Ok(spec.rate()),
            StreamSource::Replay {
                path, video_pids, fps, ..
            } => Ok(ReplayFrames::load(path, video_pids, false)?.rate(*fps)),
        }
    }
}

/// A sequence of frames, each the units from one video frame start up to the next.
pub trait FrameSource: Send {
    /// Next frame's units, or `None` when the source is exhausted.
    fn next_frame(&mut self) -> Option<Vec<Bytes>>;
}

struct SyntheticFrames {
    started: bool,
    gen: SyntheticStream,
}

impl FrameSource for SyntheticFrames {
    fn next_frame(&mut self) -> Option<Vec<Bytes>> {
        let frame = self.gen.next_frame();
        if !self.started {
            self.started = true;
            let mut units = self.gen.psi();
            units.extend(frame.units);
            return Some(units);
        }
        Some(frame.units)
    }
}

/// Read a raw TS capture into shared 188-byte units.
pub fn read_ts_file(path: &Path) -> Result<Vec<Bytes>, SourceError> {
    let data = std::fs::read(path).map_err(|source| SourceError::Io {
        path: path.to_owned(),
        source,
    })?;
    let data = Bytes::from(data);
    let packets = scan_datagram(&data).map_err(|source| SourceError::Ts {
        path: path.to_owned(),
        source,
    })?;
    Ok(packets.into_iter().map(|p| p.into_raw()).collect())
}

/// Frames of a capture file, optionally looping forever.
pub struct ReplayFrames {
    video_pids: Vec<u16>,
    frames: Vec<Vec<Bytes>>,
    next: usize,
    looped: bool,
}

impl ReplayFrames {
    pub fn load(path: &Path, video_pids: &[u16], looped: bool) -> Result<Self, SourceError> {
        let units = read_ts_file(path)?;
        let frames = split_frames(&units, video_pids);
        if frames.is_empty() {
            return Err(SourceError::NoFrames {
                path: path.to_owned(),
                pids: video_pids.to_vec(),
            });
        }
        Ok(ReplayFrames {
            video_pids: video_pids.to_vec(),
            frames,
            next: 0,
            looped,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Bits per second by class when played at `fps`.
    pub fn rate(&self, fps: f64) -> StreamRate {
        let mut classifier = Classifier::new(self.video_pids.iter().copied());
        let mut diff_units = 0u64;
        let mut other_units = 0u64;
        for unit in self.frames.iter().flatten() {
            let Ok(pkt) = parse_ts_packet(unit) else { continue };
            match classifier.classify(&pkt) {
                FrameClass::Differential => diff_units += 1,
                _ => other_units += 1,
            }
        }
        let seconds = self.frames.len() as f64 / fps;
        let bits = (TS_PACKET_SIZE * 8) as f64;
        StreamRate::new(other_units as f64 * bits / seconds, diff_units as f64 * bits / seconds)
    }
}

impl FrameSource for ReplayFrames {
    fn next_frame(&mut self) -> Option<Vec<Bytes>> {
        if self.next == self.frames.len() {
            if !self.looped {
                return None;
            }
            self.next = 0;
        }
        self.next += 1;
        Some(self.frames[self.next - 1].clone())
    }
}

/// Group units into frames. Units before the first video frame start join
/// the first frame.
fn split_frames(units: &[Bytes], video_pids: &[u16]) -> Vec<Vec<Bytes>> {
    let mut frames: Vec<Vec<Bytes>> = Vec::new();
    let mut current = Vec::new();
    let mut seen_start = false;
    for unit in units {
        let start = parse_ts_packet(unit)
            .map(|p| p.pusi && video_pids.contains(&p.pid))
            .unwrap_or(false);
        if start && seen_start {
            frames.push(std::mem::take(&mut current));
        }
        seen_start |= start;
        current.push(unit.clone());
    }
    if seen_start {
        frames.push(current);
    }
    frames
}
