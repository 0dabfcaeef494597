//! Handshake-packet features for TLS over TCP. A packet counts as a
//! handshake packet when its payload starts a TLS record and one of the
//! records it holds is a handshake record; records are not reassembled
//! across segments.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::flow::Flow;
use super::pcap::{PacketRecord, Protocol};
use super::IngestError;

pub const DEFAULT_CUTOFF: usize = 600;
pub const HANDSHAKE_PACKETS: usize = 3;

const CONTENT_HANDSHAKE: u8 = 22;
const CLIENT_HELLO: u8 = 1;
const SERVER_HELLO: u8 = 2;
const EXT_SERVER_NAME: u16 = 0;

/// Where each packet's segment starts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Anchor {
    /// The IP header.
    Network,
    /// The TCP header.
    Transport,
    /// The first handshake record header.
    #[default]
    Record,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TlsFeatures {
    /// `packets × cutoff` bytes, zero-padded.
    pub bytes: Vec<u8>,
    pub sni: Option<String>,
    pub session_id: Option<Vec<u8>>,
    /// Feature-vector regions to zero: SNI extension data, cipher-suite
    /// fields and, with the network anchor, IP addresses.
    pub sensitive: Vec<Range<usize>>,
}

fn be16(b: &[u8], at: usize) -> usize {
    usize::from(u16::from_be_bytes([b[at], b[at + 1]]))
}

fn be24(b: &[u8], at: usize) -> usize {
    (usize::from(b[at]) << 16) | (usize::from(b[at + 1]) << 8) | usize::from(b[at + 2])
}

/// Fields found in one packet, as payload offsets.
#[derive(Default)]
struct Findings {
    first_handshake: Option<usize>,
    sni: Option<String>,
    session_id: Option<Vec<u8>>,
    sensitive: Vec<Range<usize>>,
}

fn is_record_start(p: &[u8], at: usize) -> bool {
    p.len() >= at + 5 && (20..=24).contains(&p[at]) && p[at + 1] == 3
}

/// Reads a length-prefixed field at `*at`, advancing past it.
fn field(p: &[u8], at: &mut usize, len_bytes: usize, end: usize) -> Option<Range<usize>> {
    if *at + len_bytes > end {
        return None;
    }
    let len = match len_bytes {
        1 => usize::from(p[*at]),
        2 => be16(p, *at),
        _ => unreachable!("length prefixes are 1 or 2 bytes"),
    };
    let start = *at + len_bytes;
    if start + len > end {
        return None;
    }
    *at = start + len;
    Some(start..start + len)
}

fn parse_client_hello(p: &[u8], body: Range<usize>, f: &mut Findings) -> Option<()> {
    let end = body.end;
    let mut at = body.start + 2 + 32;
    let sid = field(p, &mut at, 1, end)?;
    f.session_id = Some(p[sid].to_vec());
    let ciphers = field(p, &mut at, 2, end)?;
    f.sensitive.push(ciphers);
    field(p, &mut at, 1, end)?;
    let exts = field(p, &mut at, 2, end)?;
    let mut at = exts.start;
    while at + 4 <= exts.end {
        let kind = be16(p, at) as u16;
        at += 2;
        let data = field(p, &mut at, 2, exts.end)?;
        if kind == EXT_SERVER_NAME {
            f.sensitive.push(data.clone());
            let mut e = data.start;
            let list = field(p, &mut e, 2, data.end)?;
            let mut e = list.start;
            while e + 3 <= list.end {
                let name_type = p[e];
                e += 1;
                let name = field(p, &mut e, 2, list.end)?;
                if name_type == 0 && f.sni.is_none() {
                    f.sni = std::str::from_utf8(&p[name]).ok().map(str::to_string);
                }
            }
        }
    }
    Some(())
}

fn parse_server_hello(p: &[u8], body: Range<usize>, f: &mut Findings) -> Option<()> {
    let mut at = body.start + 2 + 32;
    let sid = field(p, &mut at, 1, body.end)?;
    if f.session_id.is_none() {
        f.session_id = Some(p[sid].to_vec());
    }
    if at + 2 <= body.end {
        f.sensitive.push(at..at + 2);
    }
    Some(())
}

fn scan_packet(p: &[u8]) -> Findings {
    let mut f = Findings::default();
    let mut at = 0;
    while is_record_start(p, at) {
        let kind = p[at];
        let body = at + 5..(at + 5 + be16(p, at + 3)).min(p.len());
        if kind == CONTENT_HANDSHAKE {
            f.first_handshake.get_or_insert(at);
            let mut m = body.start;
            while m + 4 <= body.end {
                let msg_type = p[m];
                let msg = m + 4..(m + 4 + be24(p, m + 1)).min(body.end);
                // Unparsable bodies still count as handshake packets.
                let _ = match msg_type {
                    CLIENT_HELLO => parse_client_hello(p, msg.clone(), &mut f),
                    SERVER_HELLO => parse_server_hello(p, msg.clone(), &mut f),
                    _ => Some(()),
                };
                m = msg.end;
            }
        }
        at = body.end;
    }
    f
}

fn ip_address_range(packet: &PacketRecord) -> Range<usize> {
    if packet.headers.first().is_some_and(|b| b >> 4 == 6) {
        8..40
    } else {
        12..20
    }
}

/// Concatenates the first `packets` handshake packets, each cut or padded to
/// `cutoff` bytes from the anchor.
pub fn extract_tls_features(
    flow: &Flow,
    cutoff: usize,
    packets: usize,
    anchor: Anchor,
) -> Result<TlsFeatures, IngestError> {
    if flow.key.protocol != Protocol::Tcp {
        return Err(IngestError::NoHandshakeFound);
    }
    let mut out = TlsFeatures {
        bytes: vec![0; cutoff * packets],
        sni: None,
        session_id: None,
        sensitive: Vec::new(),
    };
    let mut taken = 0;
    for packet in &flow.packets {
        if taken == packets {
            break;
        }
        let f = scan_packet(&packet.payload);
        let Some(record) = f.first_handshake else {
            continue;
        };
        let hl = packet.headers.len();
        let start = match anchor {
            Anchor::Network => 0,
            Anchor::Transport => packet.ip_header_len,
            Anchor::Record => hl + record,
        };
        let segment = taken * cutoff;
        let source = packet.headers.iter().chain(&packet.payload).skip(start).take(cutoff);
        for (dst, &b) in out.bytes[segment..].iter_mut().zip(source) {
            *dst = b;
        }
        // Source offset -> feature offset, clipped to this segment.
        let place = |r: Range<usize>| {
            let lo = r.start.max(start) - start;
            let hi = r.end.max(start) - start;
            (lo.min(cutoff) < hi.min(cutoff)).then(|| segment + lo.min(cutoff)..segment + hi.min(cutoff))
        };
        let mut regions: Vec<Range<usize>> = f.sensitive.iter().map(|r| hl + r.start..hl + r.end).collect();
        if anchor == Anchor::Network {
            regions.push(ip_address_range(packet));
        }
        out.sensitive.extend(regions.into_iter().filter_map(place));
        if out.sni.is_none() {
            out.sni = f.sni;
        }
        if out.session_id.is_none() {
            out.session_id = f.session_id.filter(|s| !s.is_empty());
        }
        taken += 1;
    }
    if taken == 0 {
        return Err(IngestError::NoHandshakeFound);
    }
    Ok(out)
}

/// Zeroes `regions`; applying it twice changes nothing further.
pub fn obfuscate(bytes: &[u8], regions: &[Range<usize>]) -> Vec<u8> {
    let mut out = bytes.to_vec();
    for r in regions {
        out[r.clone()].fill(0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::fixtures::*;
    use crate::ingest::flow::assemble_flows;
    use crate::ingest::pcap::parse_pcap;

    fn tls_flow() -> Flow {
        let (packets, _) = parse_pcap(&two_flow_capture()).unwrap();
        assemble_flows(packets, 60.0).remove(0)
    }

    fn contains(hay: &[u8], needle: &[u8]) -> bool {
        hay.windows(needle.len()).any(|w| w == needle)
    }

    #[test]
    fn client_hello_yields_sni_and_fixed_length() {
        let flow = tls_flow();
        let f = extract_tls_features(&flow, DEFAULT_CUTOFF, HANDSHAKE_PACKETS, Anchor::Record).unwrap();
        assert_eq!(f.sni.as_deref(), Some("example.com"));
        assert_eq!(f.session_id, Some(vec![7; 32]));
        assert_eq!(f.bytes.len(), 1800);
        // Segment starts at the record header.
        assert_eq!(&f.bytes[..3], &[22, 3, 1]);
        assert_eq!(&f.bytes[600..603], &[22, 3, 1]);
        let hello_len = client_hello(Some("example.com"), &[7; 32], &FIXTURE_CIPHERS).len();
        assert!(f.bytes[hello_len..600].iter().all(|&b| b == 0));
        assert!(contains(&f.bytes, b"example.com"));
    }

    #[test]
    fn obfuscation_zeroes_only_sensitive_fields() {
        let flow = tls_flow();
        let f = extract_tls_features(&flow, DEFAULT_CUTOFF, HANDSHAKE_PACKETS, Anchor::Record).unwrap();
        let o = obfuscate(&f.bytes, &f.sensitive);
        assert!(!contains(&o, b"example.com"));
        // Cipher list: record 5 + handshake 4 + version 2 + random 32 + sid 33 + len 2.
        let ciphers = 5 + 4 + 2 + 32 + 33 + 2;
        assert!(o[ciphers..ciphers + 6].iter().all(|&b| b == 0));
        assert_eq!(&f.bytes[ciphers..ciphers + 2], &[0xc0, 0x2f]);
        // ServerHello chosen suite in the second segment.
        let chosen = 600 + 5 + 4 + 2 + 32 + 33;
        assert_eq!(&o[chosen..chosen + 2], &[0, 0]);
        let mut mask = vec![false; o.len()];
        for r in &f.sensitive {
            mask[r.clone()].iter_mut().for_each(|m| *m = true);
        }
        for i in 0..o.len() {
            if !mask[i] {
                assert_eq!(o[i], f.bytes[i], "byte {i}");
            }
        }
        assert_eq!(obfuscate(&o, &f.sensitive), o);
    }

    #[test]
    fn anchors_shift_the_segment_start() {
        let flow = tls_flow();
        let net = extract_tls_features(&flow, 600, 3, Anchor::Network).unwrap();
        assert_eq!(net.bytes[0], 0x45);
        assert_eq!(&net.bytes[40..43], &[22, 3, 1]);
        let masked = obfuscate(&net.bytes, &net.sensitive);
        assert!(masked[12..20].iter().all(|&b| b == 0));
        assert!(!contains(&masked, b"example.com"));
        let tcp = extract_tls_features(&flow, 600, 3, Anchor::Transport).unwrap();
        assert_eq!(&tcp.bytes[..2], &50000u16.to_be_bytes());
        assert_eq!(&tcp.bytes[20..23], &[22, 3, 1]);
    }

    #[test]
    fn application_data_only_has_no_handshake() {
        let cap = PcapBuilder::new()
            .frame(1, 0, &tcp_frame(CLIENT, 1, SERVER, 443, &application_data(100)))
            .finish();
        let flows = assemble_flows(parse_pcap(&cap).unwrap().0, 60.0);
        assert!(matches!(
            extract_tls_features(&flows[0], 600, 3, Anchor::Record),
            Err(IngestError::NoHandshakeFound)
        ));
    }

    #[test]
    fn ipv6_handshake_is_found() {
        let mut a = [0u8; 16];
        a[15] = 1;
        let mut b = [0u8; 16];
        b[15] = 2;
        let cap = PcapBuilder::new()
            .frame(1, 0, &tcp6_frame(a, 1, b, 443, &client_hello(Some("v6.test"), &[], &FIXTURE_CIPHERS)))
            .finish();
        let flows = assemble_flows(parse_pcap(&cap).unwrap().0, 60.0);
        let f = extract_tls_features(&flows[0], 600, 3, Anchor::Network).unwrap();
        assert_eq!(f.sni.as_deref(), Some("v6.test"));
        assert_eq!(f.session_id, None);
        assert!(obfuscate(&f.bytes, &f.sensitive)[8..40].iter().all(|&x| x == 0));
    }
}
