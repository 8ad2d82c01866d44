//! MPEG-TS packet header parsing and datagram stride scanning.

use bytes::Bytes;

use super::DpiError;

/// TS packet size in bytes.
pub const TS_PACKET_SIZE: usize = 188;

/// TS sync byte (0x47).
pub const SYNC_BYTE: u8 = 0x47;

/// Largest number of TS units carried in one datagram.
pub const MAX_UNITS_PER_DATAGRAM: usize = 7;

/// Adaptation field control code (2 bits).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptationControl {
    Reserved,
    PayloadOnly,
    AdaptationOnly,
    AdaptationAndPayload,
}

impl AdaptationControl {
    fn from_bits(bits: u8) -> Self {
        match bits & 0x03 {
            0b01 => AdaptationControl::PayloadOnly,
            0b10 => AdaptationControl::AdaptationOnly,
            0b11 => AdaptationControl::AdaptationAndPayload,
            _ => AdaptationControl::Reserved,
        }
    }

    pub fn bits(self) -> u8 {
        match self {
            AdaptationControl::Reserved => 0b00,
            AdaptationControl::PayloadOnly => 0b01,
            AdaptationControl::AdaptationOnly => 0b10,
            AdaptationControl::AdaptationAndPayload => 0b11,
        }
    }

    pub fn has_adaptation(self) -> bool {
        matches!(
            self,
            AdaptationControl::AdaptationOnly | AdaptationControl::AdaptationAndPayload
        )
    }

    pub fn has_payload(self) -> bool {
        matches!(
            self,
            AdaptationControl::PayloadOnly | AdaptationControl::AdaptationAndPayload
        )
    }
}

/// One 188-byte transport stream unit with its decoded header.
///
/// `raw` is a reference-counted view into the ingested datagram, so cloning a
/// packet never copies its bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TsPacket {
    raw: Bytes,
    pub transport_error: bool,
    /// Payload unit start indicator.
    pub pusi: bool,
    pub pid: u16,
    pub adaptation_control: AdaptationControl,
    pub continuity_counter: u8,
    /// Random access indicator, present only when the adaptation field carries flags.
    pub random_access: Option<bool>,
    /// Index of the first payload byte; `None` when the packet carries no payload.
    pub payload_offset: Option<usize>,
}

impl TsPacket {
    /// Parse one unit. `raw` must be exactly [`TS_PACKET_SIZE`] bytes.
    pub fn parse(raw: Bytes) -> Result<Self, DpiError> {
        if raw.len() != TS_PACKET_SIZE {
            return Err(DpiError::WrongLength(raw.len()));
        }
        if raw[0] != SYNC_BYTE {
            return Err(DpiError::SyncLoss {
                index: 0,
                found: raw[0],
            });
        }

        let adaptation_control = AdaptationControl::from_bits(raw[3] >> 4);
        let mut random_access = None;
        let mut offset = 4;
        if adaptation_control.has_adaptation() {
            let af_len = raw[4] as usize;
            // Adaptation-only packets fill the rest of the unit (183 bytes); with a
            // payload the field may be at most 182 bytes.
            let max = if adaptation_control.has_payload() { 182 } else { 183 };
            if af_len > max {
                return Err(DpiError::Malformed {
                    adaptation_length: af_len,
                });
            }
            if af_len > 0 {
                random_access = Some(raw[5] & 0x40 != 0);
            }
            offset = 5 + af_len;
        }
        let payload_offset = adaptation_control.has_payload().then_some(offset);

        Ok(TsPacket {
            transport_error: raw[1] & 0x80 != 0,
            pusi: raw[1] & 0x40 != 0,
            pid: (u16::from(raw[1] & 0x1F) << 8) | u16::from(raw[2]),
            adaptation_control,
            continuity_counter: raw[3] & 0x0F,
            random_access,
            payload_offset,
            raw,
        })
    }

    /// The full 188-byte unit.
    pub fn raw(&self) -> &Bytes {
        &self.raw
    }

    pub fn into_raw(self) -> Bytes {
        self.raw
    }

    pub fn payload(&self) -> &[u8] {
        match self.payload_offset {
            Some(off) => &self.raw[off..],
            None => &[],
        }
    }
}

/// Parse a standalone 188-byte unit, copying it into a fresh buffer.
pub fn parse_ts_packet(raw: &[u8]) -> Result<TsPacket, DpiError> {
    TsPacket::parse(Bytes::copy_from_slice(raw))
}

/// Split a datagram payload into its TS units, parsing only the 4-byte header
/// (plus the adaptation field, when present) of each unit.
pub fn scan_datagram(payload: &Bytes) -> Result<Vec<TsPacket>, DpiError> {
    if payload.is_empty() || !payload.len().is_multiple_of(TS_PACKET_SIZE) {
        return Err(DpiError::BadFraming(payload.len()));
    }
    (0..payload.len() / TS_PACKET_SIZE)
        .map(|index| {
            let start = index * TS_PACKET_SIZE;
            TsPacket::parse(payload.slice(start..start + TS_PACKET_SIZE)).map_err(|e| match e {
                DpiError::SyncLoss { found, .. } => DpiError::SyncLoss { index, found },
                other => other,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(header: [u8; 4]) -> Vec<u8> {
        let mut raw = vec![0xFFu8; TS_PACKET_SIZE];
        raw[..4].copy_from_slice(&header);
        raw
    }

    #[test]
    fn pusi_video_header() {
        let pkt = parse_ts_packet(&unit([0x47, 0x40, 0x64, 0x10])).unwrap();
        assert!(pkt.pusi);
        assert!(!pkt.transport_error);
        assert_eq!(pkt.pid, 0x064);
        assert_eq!(pkt.adaptation_control, AdaptationControl::PayloadOnly);
        assert_eq!(pkt.continuity_counter, 0);
        assert_eq!(pkt.random_access, None);
        assert_eq!(pkt.payload_offset, Some(4));
        assert_eq!(pkt.payload().len(), 184);
    }

    #[test]
    fn pat_header() {
        let pkt = parse_ts_packet(&unit([0x47, 0x00, 0x00, 0x10])).unwrap();
        assert_eq!(pkt.pid, 0);
        assert!(!pkt.pusi);
    }

    #[test]
    fn full_width_fields() {
        // TEI set, PID 0x1FFF, AFC 01, CC 15.
        let pkt = parse_ts_packet(&unit([0x47, 0x9F, 0xFF, 0x1F])).unwrap();
        assert!(pkt.transport_error);
        assert!(!pkt.pusi);
        assert_eq!(pkt.pid, 0x1FFF);
        assert_eq!(pkt.continuity_counter, 15);
    }

    #[test]
    fn sync_loss() {
        let err = parse_ts_packet(&unit([0x48, 0x40, 0x64, 0x10])).unwrap_err();
        assert!(matches!(err, DpiError::SyncLoss { index: 0, found: 0x48 }));
    }

    #[test]
    fn wrong_length() {
        assert!(matches!(parse_ts_packet(&[0x47; 187]), Err(DpiError::WrongLength(187))));
    }

    #[test]
    fn adaptation_field_with_random_access() {
        let mut raw = unit([0x47, 0x40, 0x64, 0x30]);
        raw[4] = 7;
        raw[5] = 0x40;
        let pkt = parse_ts_packet(&raw).unwrap();
        assert_eq!(pkt.random_access, Some(true));
        assert_eq!(pkt.payload_offset, Some(12));
    }

    #[test]
    fn zero_length_adaptation_field() {
        let mut raw = unit([0x47, 0x40, 0x64, 0x30]);
        raw[4] = 0;
        let pkt = parse_ts_packet(&raw).unwrap();
        assert_eq!(pkt.random_access, None);
        assert_eq!(pkt.payload_offset, Some(5));
    }

    #[test]
    fn adaptation_only_has_no_payload() {
        let mut raw = unit([0x47, 0x00, 0x64, 0x20]);
        raw[4] = 183;
        raw[5] = 0x00;
        let pkt = parse_ts_packet(&raw).unwrap();
        assert_eq!(pkt.payload_offset, None);
        assert_eq!(pkt.random_access, Some(false));
        assert!(pkt.payload().is_empty());
    }

    #[test]
    fn adaptation_overrun_is_malformed() {
        let mut raw = unit([0x47, 0x00, 0x64, 0x30]);
        raw[4] = 183;
        assert!(matches!(
            parse_ts_packet(&raw),
            Err(DpiError::Malformed { adaptation_length: 183 })
        ));
        raw[3] = 0x20;
        raw[4] = 184;
        assert!(matches!(parse_ts_packet(&raw), Err(DpiError::Malformed { .. })));
    }

    #[test]
    fn datagram_framing() {
        let one = unit([0x47, 0x00, 0x00, 0x10]);
        let seven: Vec<u8> = (0..7).flat_map(|_| one.clone()).collect();
        assert_eq!(seven.len(), 1316);
        assert_eq!(scan_datagram(&Bytes::from(seven)).unwrap().len(), 7);
        assert_eq!(scan_datagram(&Bytes::from(one.clone())).unwrap().len(), 1);

        let mut short = one.clone();
        short.extend_from_slice(&[0, 0]);
        assert!(matches!(
            scan_datagram(&Bytes::from(short)),
            Err(DpiError::BadFraming(190))
        ));
        assert!(matches!(scan_datagram(&Bytes::new()), Err(DpiError::BadFraming(0))));
    }

    #[test]
    fn datagram_sync_loss_reports_index() {
        let mut buf: Vec<u8> = (0..3).flat_map(|_| unit([0x47, 0, 0, 0x10])).collect();
        buf[2 * TS_PACKET_SIZE] = 0x00;
        assert!(matches!(
            scan_datagram(&Bytes::from(buf)),
            Err(DpiError::SyncLoss { index: 2, found: 0 })
        ));
    }

    #[test]
    fn scanned_units_share_the_datagram_buffer() {
        let buf: Bytes = (0..2).flat_map(|_| unit([0x47, 0, 0, 0x10])).collect::<Vec<_>>().into();
        let pkts = scan_datagram(&buf).unwrap();
        assert_eq!(pkts[1].raw().as_ptr(), buf[TS_PACKET_SIZE..].as_ptr());
    }
}
