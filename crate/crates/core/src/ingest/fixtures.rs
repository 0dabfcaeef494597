//! Byte-exact builders for capture fixtures: pcap files, Ethernet/IP/TCP/UDP
//! frames, TLS handshake records and QUIC Initial packets. Checksums are
//! left zero.

use std::net::Ipv4Addr;

use super::pcap::LINKTYPE_ETHERNET;

pub struct PcapBuilder {
    swapped: bool,
    nanos: bool,
    bytes: Vec<u8>,
}

impl PcapBuilder {
    pub fn new() -> Self {
        Self::with_options(false, false, LINKTYPE_ETHERNET)
    }

    /// `swapped` writes every header field big-endian.
    pub fn with_options(swapped: bool, nanos: bool, link_type: u32) -> Self {
        let mut b = Self {
            swapped,
            nanos,
            bytes: Vec::new(),
        };
        b.u32(if nanos { 0xa1b2_3c4d } else { 0xa1b2_c3d4 });
        b.u16(2);
        b.u16(4);
        b.u32(0);
        b.u32(0);
        b.u32(65535);
        b.u32(link_type);
        b
    }

    fn u16(&mut self, v: u16) {
        let raw = if self.swapped { v.to_be_bytes() } else { v.to_le_bytes() };
        self.bytes.extend_from_slice(&raw);
    }

    fn u32(&mut self, v: u32) {
        let raw = if self.swapped { v.to_be_bytes() } else { v.to_le_bytes() };
        self.bytes.extend_from_slice(&raw);
    }

    /// `frac` is in microseconds, or nanoseconds for a nanosecond capture.
    pub fn frame(mut self, secs: u32, frac: u32, frame: &[u8]) -> Self {
        debug_assert!(frac < if self.nanos { 1_000_000_000 } else { 1_000_000 });
        self.u32(secs);
        self.u32(frac);
        self.u32(frame.len() as u32);
        self.u32(frame.len() as u32);
        self.bytes.extend_from_slice(frame);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.bytes
    }
}

impl Default for PcapBuilder {
    fn default() -> Self {
        Self::new()
    }
}

fn ethernet(ethertype: u16, ip: &[u8]) -> Vec<u8> {
    let mut f = vec![0x02, 0, 0, 0, 0, 0x02, 0x02, 0, 0, 0, 0, 0x01];
    f.extend_from_slice(&ethertype.to_be_bytes());
    f.extend_from_slice(ip);
    f
}

fn ipv4(src: Ipv4Addr, dst: Ipv4Addr, protocol: u8, transport: &[u8]) -> Vec<u8> {
    let total = (20 + transport.len()) as u16;
    let mut p = vec![0x45, 0];
    p.extend_from_slice(&total.to_be_bytes());
    p.extend_from_slice(&[0, 1, 0x40, 0, 64, protocol, 0, 0]);
    p.extend_from_slice(&src.octets());
    p.extend_from_slice(&dst.octets());
    p.extend_from_slice(transport);
    p
}

pub fn tcp_segment(sport: u16, dport: u16, seq: u32, payload: &[u8]) -> Vec<u8> {
    let mut t = Vec::with_capacity(20 + payload.len());
    t.extend_from_slice(&sport.to_be_bytes());
    t.extend_from_slice(&dport.to_be_bytes());
    t.extend_from_slice(&seq.to_be_bytes());
    t.extend_from_slice(&[0, 0, 0, 0, 0x50, 0x18, 0xff, 0xff, 0, 0, 0, 0]);
    t.extend_from_slice(payload);
    t
}

pub fn udp_datagram(sport: u16, dport: u16, payload: &[u8]) -> Vec<u8> {
    let mut u = Vec::with_capacity(8 + payload.len());
    u.extend_from_slice(&sport.to_be_bytes());
    u.extend_from_slice(&dport.to_be_bytes());
    u.extend_from_slice(&((8 + payload.len()) as u16).to_be_bytes());
    u.extend_from_slice(&[0, 0]);
    u.extend_from_slice(payload);
    u
}

/// Ethernet + IPv4 + TCP frame.
pub fn tcp_frame(src: [u8; 4], sport: u16, dst: [u8; 4], dport: u16, payload: &[u8]) -> Vec<u8> {
    let seg = tcp_segment(sport, dport, 1, payload);
    ethernet(0x0800, &ipv4(src.into(), dst.into(), 6, &seg))
}

/// Ethernet + IPv4 + UDP frame.
pub fn udp_frame(src: [u8; 4], sport: u16, dst: [u8; 4], dport: u16, payload: &[u8]) -> Vec<u8> {
    ethernet(0x0800, &ipv4(src.into(), dst.into(), 17, &udp_datagram(sport, dport, payload)))
}

/// Ethernet + IPv6 + TCP frame.
pub fn tcp6_frame(src: [u8; 16], sport: u16, dst: [u8; 16], dport: u16, payload: &[u8]) -> Vec<u8> {
    let seg = tcp_segment(sport, dport, 1, payload);
    let mut ip = vec![0x60, 0, 0, 0];
    ip.extend_from_slice(&(seg.len() as u16).to_be_bytes());
    ip.extend_from_slice(&[6, 64]);
    ip.extend_from_slice(&src);
    ip.extend_from_slice(&dst);
    ip.extend_from_slice(&seg);
    ethernet(0x86dd, &ip)
}

fn u24(v: usize) -> [u8; 3] {
    [(v >> 16) as u8, (v >> 8) as u8, v as u8]
}

/// Wraps a handshake message body in handshake and record headers.
fn handshake_record(msg_type: u8, body: &[u8]) -> Vec<u8> {
    let mut r = vec![22, 3, 1];
    r.extend_from_slice(&((body.len() + 4) as u16).to_be_bytes());
    r.push(msg_type);
    r.extend_from_slice(&u24(body.len()));
    r.extend_from_slice(body);
    r
}

/// TLS 1.2 ClientHello record with an SNI extension when `sni` is given.
pub fn client_hello(sni: Option<&str>, session_id: &[u8], ciphers: &[u16]) -> Vec<u8> {
    let mut b = vec![3, 3];
    b.extend((0..32).map(|i| i as u8 ^ 0x5a));
    b.push(session_id.len() as u8);
    b.extend_from_slice(session_id);
    b.extend_from_slice(&((ciphers.len() * 2) as u16).to_be_bytes());
    for c in ciphers {
        b.extend_from_slice(&c.to_be_bytes());
    }
    b.extend_from_slice(&[1, 0]);
    let mut ext = Vec::new();
    if let Some(name) = sni {
        let n = name.as_bytes();
        ext.extend_from_slice(&[0, 0]);
        ext.extend_from_slice(&((n.len() + 5) as u16).to_be_bytes());
        ext.extend_from_slice(&((n.len() + 3) as u16).to_be_bytes());
        ext.push(0);
        ext.extend_from_slice(&(n.len() as u16).to_be_bytes());
        ext.extend_from_slice(n);
    }
    // supported_groups, so SNI is not the only extension.
    ext.extend_from_slice(&[0, 10, 0, 4, 0, 2, 0, 23]);
    b.extend_from_slice(&(ext.len() as u16).to_be_bytes());
    b.extend_from_slice(&ext);
    handshake_record(1, &b)
}

pub fn server_hello(session_id: &[u8], cipher: u16) -> Vec<u8> {
    let mut b = vec![3, 3];
    b.extend((0..32).map(|i| i as u8 ^ 0xa5));
    b.push(session_id.len() as u8);
    b.extend_from_slice(session_id);
    b.extend_from_slice(&cipher.to_be_bytes());
    b.push(0);
    b.extend_from_slice(&[0, 0]);
    handshake_record(2, &b)
}

/// A Certificate-like handshake record of `len` opaque body bytes.
pub fn opaque_handshake(msg_type: u8, len: usize) -> Vec<u8> {
    let body: Vec<u8> = (0..len).map(|i| (i % 251) as u8 + 1).collect();
    handshake_record(msg_type, &body)
}

pub fn application_data(len: usize) -> Vec<u8> {
    let mut r = vec![23, 3, 3];
    r.extend_from_slice(&(len as u16).to_be_bytes());
    r.extend((0..len).map(|i| (i % 200) as u8 + 7));
    r
}

/// QUIC v1 long-header Initial packet of exactly `len` bytes.
pub fn quic_initial(len: usize) -> Vec<u8> {
    assert!(len >= 32);
    let mut p = vec![0xc3, 0, 0, 0, 1, 8];
    p.extend_from_slice(&[0x11; 8]);
    p.push(0);
    p.push(0);
    p.resize(len, 0x42);
    p
}

/// QUIC short-header (1-RTT) packet.
pub fn quic_short(len: usize) -> Vec<u8> {
    let mut p = vec![0x43];
    p.resize(len, 0x24);
    p
}

pub const CLIENT: [u8; 4] = [10, 0, 0, 2];
pub const SERVER: [u8; 4] = [93, 184, 216, 34];
pub const OTHER_SERVER: [u8; 4] = [198, 51, 100, 7];
pub const FIXTURE_CIPHERS: [u16; 3] = [0xc02f, 0xc030, 0x009c];

/// Two interleaved TCP conversations: a TLS handshake (ClientHello with SNI
/// `example.com`, ServerHello, Certificate) and a plain exchange.
pub fn two_flow_capture() -> Vec<u8> {
    let session = [7u8; 32];
    PcapBuilder::new()
        .frame(1_600_000_000, 100, &tcp_frame(CLIENT, 50000, SERVER, 443, &client_hello(Some("example.com"), &session, &FIXTURE_CIPHERS)))
        .frame(1_600_000_000, 200, &tcp_frame(CLIENT, 50001, OTHER_SERVER, 80, b"GET / HTTP/1.1\r\n\r\n"))
        .frame(1_600_000_000, 300, &tcp_frame(SERVER, 443, CLIENT, 50000, &server_hello(&session, 0xc02f)))
        .frame(1_600_000_000, 400, &tcp_frame(OTHER_SERVER, 80, CLIENT, 50001, b"HTTP/1.1 200 OK\r\n\r\n"))
        .frame(1_600_000_000, 500, &tcp_frame(SERVER, 443, CLIENT, 50000, &opaque_handshake(11, 900)))
        .frame(1_600_000_000, 600, &tcp_frame(CLIENT, 50000, SERVER, 443, &application_data(64)))
        .finish()
}
