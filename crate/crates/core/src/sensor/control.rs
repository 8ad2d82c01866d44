//! Sensor-side suppression down to the notified effective quality.

use bytes::{Bytes, BytesMut};

use crate::control::QualityNotify;
use crate::dpi::{parse_ts_packet, Classifier, DpiError, FrameClass, MAX_UNITS_PER_DATAGRAM, TS_PACKET_SIZE};
use crate::edge::ErrorDiffuser;
use crate::ids::StreamId;
use crate::metrics::SensorCounters;
use crate::qoc::StreamQuality;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SensorError {
    #[error("stream {0} is not served by this sensor")]
    UnknownStream(StreamId),
}

/// The quality a sensor transmits at, with a pending change waiting for the
/// next frame boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorQuality {
    pub stream: StreamId,
    q_eff: StreamQuality,
    pending: Option<StreamQuality>,
    diffuser: ErrorDiffuser,
}

impl SensorQuality {
    pub fn new(stream: StreamId) -> Self {
        SensorQuality {
            stream,
            q_eff: StreamQuality::FULL,
            pending: None,
            diffuser: ErrorDiffuser::default(),
        }
    }

    pub fn q_eff(&self) -> StreamQuality {
        self.q_eff
    }

    /// Quality that will apply from the next frame on.
    pub fn upcoming(&self) -> StreamQuality {
        self.pending.unwrap_or(self.q_eff)
    }

    /// Accept a notification; it takes effect at the next frame start.
    pub fn handle_quality_notify(&mut self, msg: &QualityNotify) -> Result<(), SensorError> {
        if msg.stream != self.stream {
            return Err(SensorError::UnknownStream(msg.stream));
        }
        let q = StreamQuality::new(msg.keep.to_f64()).expect("fixed-point fractions are within [0, 1]");
        self.set_quality(q);
        Ok(())
    }

    /// Schedule `q` for the next frame start.
    pub fn set_quality(&mut self, q: StreamQuality) {
        self.pending = (q != self.q_eff).then_some(q);
    }

    fn frame_start(&mut self) {
        if let Some(q) = self.pending.take() {
            self.q_eff = q;
        }
    }

    /// Whether a packet of `class` is transmitted.
    fn admit(&mut self, class: FrameClass) -> bool {
        !(class.is_suppressible() && self.diffuser.offer(self.q_eff.loss_tolerance()))
    }
}

/// One stream's transmit path: classify with the same DPI as the edge, then
/// suppress differential packets to the current quality.
#[derive(Debug, Clone)]
pub struct SensorControl {
    classifier: Classifier,
    quality: SensorQuality,
    counters: SensorCounters,
}

impl SensorControl {
    pub fn new(stream: StreamId, video_pids: impl IntoIterator<Item = u16>) -> Self {
        SensorControl {
            classifier: Classifier::new(video_pids),
            quality: SensorQuality::new(stream),
            counters: SensorCounters::new(stream),
        }
    }

    pub fn stream(&self) -> StreamId {
        self.quality.stream
    }

    pub fn quality(&self) -> &SensorQuality {
        &self.quality
    }

    pub fn handle_quality_notify(&mut self, msg: &QualityNotify) -> Result<(), SensorError> {
        self.quality.handle_quality_notify(msg)
    }

    pub fn set_quality(&mut self, q: StreamQuality) {
        self.quality.set_quality(q)
    }

    pub fn counters(&self) -> &SensorCounters {
        &self.counters
    }

    pub fn counters_mut(&mut self) -> &mut SensorCounters {
        &mut self.counters
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    /// Decide one unit. Pending quality changes apply at video frame starts.
    pub fn admit(&mut self, unit: &Bytes) -> Result<bool, DpiError> {
        let pkt = parse_ts_packet(unit)?;
        if pkt.pusi && self.classifier.video_pids().contains(&pkt.pid) {
            self.quality.frame_start();
        }
        let class = self.classifier.classify(&pkt);
        self.counters.record_in(class);
        let keep = self.quality.admit(class);
        if keep {
            self.counters.record_out(class);
        }
        Ok(keep)
    }

    /// Filter a unit sequence down to what is transmitted.
    pub fn sensor_control<'a>(&mut self, units: impl IntoIterator<Item = &'a Bytes>) -> Result<Vec<Bytes>, DpiError> {
        let mut out = Vec::new();
        for unit in units {
            if self.admit(unit)? {
                out.push(unit.clone());
            }
        }
        Ok(out)
    }
}

/// Frame units into datagrams of at most seven units each.
pub fn pack_datagrams(units: &[Bytes]) -> Vec<Bytes> {
    units
        .chunks(MAX_UNITS_PER_DATAGRAM)
        .map(|chunk| {
            let mut buf = BytesMut::with_capacity(chunk.len() * TS_PACKET_SIZE);
            for u in chunk {
                buf.extend_from_slice(u);
            }
            buf.freeze()
        })
        .collect()
}
