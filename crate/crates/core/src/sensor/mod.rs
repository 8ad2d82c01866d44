//! Stream sources and sensor-side suppression.

pub mod control;
pub mod source;
pub mod synthetic;

pub use control::{pack_datagrams, SensorControl, SensorError, SensorQuality};
pub use source::{read_ts_file, FrameSource, ReplayFrames, SourceError, StreamSource};
pub use synthetic::{
    crc32_mpeg2, generate_synthetic, PacketTag, SyntheticFrame, SyntheticSpec, SyntheticStream, DEFAULT_PMT_PID,
    DEFAULT_VIDEO_PID,
};
