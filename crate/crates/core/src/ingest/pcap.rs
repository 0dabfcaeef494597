//! Classic libpcap captures: Ethernet (optionally 802.1Q tagged) or raw IP
//! frames carrying IPv4/IPv6 with TCP or UDP.

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IngestError;

pub const LINKTYPE_ETHERNET: u32 = 1;
pub const LINKTYPE_RAW: u32 = 101;

const MAGIC_MICROS: u32 = 0xa1b2_c3d4;
const MAGIC_NANOS: u32 = 0xa1b2_3c4d;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    Tcp,
    Udp,
}

impl Protocol {
    pub fn number(self) -> u8 {
        match self {
            Protocol::Tcp => 6,
            Protocol::Udp => 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacketRecord {
    /// Seconds since the epoch.
    pub timestamp: f64,
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: Protocol,
    /// Network and transport headers as captured.
    pub headers: Vec<u8>,
    /// Length of the network header within `headers`.
    pub ip_header_len: usize,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcapStats {
    pub frames: usize,
    pub packets: usize,
    /// Frames that are not IPv4/IPv6.
    pub non_ip: usize,
    /// IP packets carrying neither TCP nor UDP, or non-first fragments.
    pub other_transport: usize,
    /// Frames cut short by the snap length or the end of the file.
    pub truncated: usize,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    swapped: bool,
}

impl Cursor<'_> {
    fn u32_at(&self, at: usize) -> u32 {
        let raw: [u8; 4] = self.bytes[at..at + 4].try_into().expect("4 bytes");
        if self.swapped {
            u32::from_be_bytes(raw)
        } else {
            u32::from_le_bytes(raw)
        }
    }
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

enum Frame {
    Packet(PacketRecord),
    NonIp,
    OtherTransport,
    Truncated,
}

/// Parses a network-layer packet starting at `ip`.
fn parse_ip(ip: &[u8], timestamp: f64) -> Frame {
    let Some(&first) = ip.first() else {
        return Frame::Truncated;
    };
    let (src_ip, dst_ip, proto, ihl, end) = match first >> 4 {
        4 => {
            if ip.len() < 20 {
                return Frame::Truncated;
            }
            let ihl = usize::from(first & 0x0f) * 4;
            let total = usize::from(be16(ip, 2));
            if ihl < 20 || ip.len() < ihl {
                return Frame::Truncated;
            }
            // Fragment offset or more-fragments: only whole datagrams.
            if be16(ip, 6) & 0x3fff != 0 {
                return Frame::OtherTransport;
            }
            let src = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
            let dst = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);
            (IpAddr::V4(src), IpAddr::V4(dst), ip[9], ihl, total.max(ihl))
        }
        6 => {
            if ip.len() < 40 {
                return Frame::Truncated;
            }
            let src: [u8; 16] = ip[8..24].try_into().expect("16 bytes");
            let dst: [u8; 16] = ip[24..40].try_into().expect("16 bytes");
            let total = 40 + usize::from(be16(ip, 4));
            (IpAddr::V6(Ipv6Addr::from(src)), IpAddr::V6(Ipv6Addr::from(dst)), ip[6], 40, total)
        }
        _ => return Frame::NonIp,
    };
    // Link-layer padding lies beyond the IP length; a short capture is cut.
    if ip.len() < end {
        return Frame::Truncated;
    }
    let ip = &ip[..end];
    let t = &ip[ihl..];
    let (protocol, thl) = match proto {
        6 => {
            if t.len() < 20 {
                return Frame::Truncated;
            }
            let thl = usize::from(t[12] >> 4) * 4;
            if thl < 20 || t.len() < thl {
                return Frame::Truncated;
            }
            (Protocol::Tcp, thl)
        }
        17 => {
            if t.len() < 8 {
                return Frame::Truncated;
            }
            (Protocol::Udp, 8)
        }
        _ => return Frame::OtherTransport,
    };
    Frame::Packet(PacketRecord {
        timestamp,
        src_ip,
        dst_ip,
        src_port: be16(t, 0),
        dst_port: be16(t, 2),
        protocol,
        headers: ip[..ihl + thl].to_vec(),
        ip_header_len: ihl,
        payload: t[thl..].to_vec(),
    })
}

fn parse_ethernet(frame: &[u8], timestamp: f64) -> Frame {
    let mut at = 12;
    loop {
        if frame.len() < at + 2 {
            return Frame::Truncated;
        }
        match be16(frame, at) {
            0x8100 | 0x88a8 => at += 4,
            0x0800 | 0x86dd => return parse_ip(&frame[at + 2..], timestamp),
            _ => return Frame::NonIp,
        }
    }
}

/// Parses a whole capture held in memory.
pub fn parse_pcap(bytes: &[u8]) -> Result<(Vec<PacketRecord>, PcapStats), IngestError> {
    if bytes.len() < 24 {
        return Err(IngestError::TruncatedHeader);
    }
    let le = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"));
    let (swapped, nanos) = match le {
        MAGIC_MICROS => (false, false),
        MAGIC_NANOS => (false, true),
        m if m.swap_bytes() == MAGIC_MICROS => (true, false),
        m if m.swap_bytes() == MAGIC_NANOS => (true, true),
        m => return Err(IngestError::BadMagic(m)),
    };
    let cur = Cursor { bytes, swapped };
    let link = cur.u32_at(20);
    if link != LINKTYPE_ETHERNET && link != LINKTYPE_RAW {
        return Err(IngestError::UnsupportedLinkType(link));
    }
    let frac_scale = if nanos { 1e-9 } else { 1e-6 };
    let mut stats = PcapStats::default();
    let mut out = Vec::new();
    let mut at = 24;
    while at < bytes.len() {
        if bytes.len() - at < 16 {
            stats.truncated += 1;
            break;
        }
        let secs = cur.u32_at(at);
        let frac = cur.u32_at(at + 4);
        let incl = cur.u32_at(at + 8) as usize;
        let body = at + 16;
        stats.frames += 1;
        if bytes.len() - body < incl {
            stats.truncated += 1;
            break;
        }
        let frame = &bytes[body..body + incl];
        at = body + incl;
        let timestamp = secs as f64 + frac as f64 * frac_scale;
        let parsed = if link == LINKTYPE_ETHERNET {
            parse_ethernet(frame, timestamp)
        } else {
            parse_ip(frame, timestamp)
        };
        match parsed {
            Frame::Packet(p) => {
                stats.packets += 1;
                out.push(p);
            }
            Frame::NonIp => stats.non_ip += 1,
            Frame::OtherTransport => stats.other_transport += 1,
            Frame::Truncated => stats.truncated += 1,
        }
    }
    Ok((out, stats))
}

pub fn read_pcap(path: &Path) -> Result<(Vec<PacketRecord>, PcapStats), IngestError> {
    let bytes = std::fs::read(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_pcap(&bytes)
}
