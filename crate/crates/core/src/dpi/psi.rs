//! Just enough PAT/PMT parsing to find a capture's H.264 PIDs.

use std::collections::BTreeSet;

use super::packet::TsPacket;

const PAT_PID: u16 = 0x0000;
const STREAM_TYPE_H264: u8 = 0x1B;

/// Section bytes of a PSI packet that starts one, without the pointer field.
fn section(pkt: &TsPacket) -> Option<&[u8]> {
    if !pkt.pusi {
        return None;
    }
    let payload = pkt.payload();
    let pointer = *payload.first()? as usize;
    let body = payload.get(1 + pointer..)?;
    if body.len() < 3 {
        return None;
    }
    let len = (usize::from(body[1] & 0x0F) << 8) | usize::from(body[2]);
    // Only sections that fit in one packet; the CRC is not checked.
    body.get(..3 + len)
}

fn pat_programs(s: &[u8]) -> Vec<u16> {
    if s[0] != 0x00 || s.len() < 12 {
        return Vec::new();
    }
    s[8..s.len() - 4]
        .chunks_exact(4)
        .filter(|e| u16::from_be_bytes([e[0], e[1]]) != 0)
        .map(|e| (u16::from(e[2] & 0x1F) << 8) | u16::from(e[3]))
        .collect()
}

fn pmt_video(s: &[u8]) -> Vec<u16> {
    if s[0] != 0x02 || s.len() < 16 {
        return Vec::new();
    }
    let info_len = (usize::from(s[10] & 0x0F) << 8) | usize::from(s[11]);
    let mut es = s.get(12 + info_len..s.len() - 4).unwrap_or(&[]);
    let mut pids = Vec::new();
    while es.len() >= 5 {
        let pid = (u16::from(es[1] & 0x1F) << 8) | u16::from(es[2]);
        let es_info = (usize::from(es[3] & 0x0F) << 8) | usize::from(es[4]);
        if es[0] == STREAM_TYPE_H264 {
            pids.push(pid);
        }
        es = es.get(5 + es_info..).unwrap_or(&[]);
    }
    pids
}

/// PIDs announced as H.264 video by the first PAT and its PMTs.
pub fn find_video_pids<'a>(packets: impl IntoIterator<Item = &'a TsPacket>) -> BTreeSet<u16> {
    let mut pmts: Option<Vec<u16>> = None;
    let mut video = BTreeSet::new();
    for pkt in packets {
        let Some(s) = section(pkt) else { continue };
        match &pmts {
            None if pkt.pid == PAT_PID => pmts = Some(pat_programs(s)),
            Some(p) if p.contains(&pkt.pid) => video.extend(pmt_video(s)),
            _ => {}
        }
    }
    video
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpi::parse_ts_packet;
    use crate::ids::StreamId;
    use crate::sensor::{generate_synthetic, SyntheticSpec};

    #[test]
    fn finds_the_synthetic_video_pid() {
        let mut spec = SyntheticSpec::new(4, 2, 25.0);
        spec.video_pid = 0x123;
        let pkts: Vec<TsPacket> = generate_synthetic(StreamId(1), &spec, 4)
            .iter()
            .map(|u| parse_ts_packet(u).unwrap())
            .collect();
        assert_eq!(find_video_pids(&pkts), BTreeSet::from([0x123]));
    }

    #[test]
    fn no_psi_means_no_pids() {
        let spec = SyntheticSpec::new(4, 2, 25.0);
        let pkts: Vec<TsPacket> = generate_synthetic(StreamId(1), &spec, 4)
            .iter()
            .skip(2)
            .map(|u| parse_ts_packet(u).unwrap())
            .collect();
        assert!(find_video_pids(&pkts).is_empty());
    }
}
