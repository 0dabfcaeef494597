use std::collections::HashMap;
use std::net::IpAddr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::pcap::{PacketRecord, Protocol};

pub const DEFAULT_IDLE_TIMEOUT: f64 = 60.0;

/// Direction-free 5-tuple: the smaller `(ip, port)` endpoint comes first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub low: (IpAddr, u16),
    pub high: (IpAddr, u16),
    pub protocol: Protocol,
}

impl FlowKey {
    pub fn of(p: &PacketRecord) -> Self {
        let a = (p.src_ip, p.src_port);
        let b = (p.dst_ip, p.dst_port);
        let (low, high) = if a <= b { (a, b) } else { (b, a) };
        Self {
            low,
            high,
            protocol: p.protocol,
        }
    }

    /// Salted SHA-256 of the key, truncated to 64 bits; the only form in
    /// which addresses leave the pipeline.
    pub fn salted_hash(&self, salt: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(salt.as_bytes());
        for (ip, port) in [self.low, self.high] {
            match ip {
                IpAddr::V4(v) => h.update(v.octets()),
                IpAddr::V6(v) => h.update(v.octets()),
            }
            h.update(port.to_be_bytes());
        }
        h.update([self.protocol.number()]);
        u64::from_be_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub key: FlowKey,
    /// Time-ordered.
    pub packets: Vec<PacketRecord>,
    /// Sender of the first packet.
    pub client: IpAddr,
    pub session_id: Option<Vec<u8>>,
    pub sni: Option<String>,
}

impl Flow {
    pub fn first_timestamp(&self) -> f64 {
        self.packets[0].timestamp
    }

    pub fn last_timestamp(&self) -> f64 {
        self.packets[self.packets.len() - 1].timestamp
    }
}

/// Groups packets by canonical key; a silence longer than `idle_timeout`
/// starts a new flow. Flows are ordered by their first packet.
pub fn assemble_flows(packets: Vec<PacketRecord>, idle_timeout: f64) -> Vec<Flow> {
    let mut packets = packets;
    // Stable: equal timestamps keep capture order.
    packets.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    let mut flows: Vec<Flow> = Vec::new();
    let mut open: HashMap<FlowKey, usize> = HashMap::new();
    for p in packets {
        let key = FlowKey::of(&p);
        let current = open
            .get(&key)
            .copied()
            .filter(|&i| p.timestamp - flows[i].last_timestamp() <= idle_timeout);
        match current {
            Some(i) => flows[i].packets.push(p),
            None => {
                open.insert(key, flows.len());
                flows.push(Flow {
                    key,
                    client: p.src_ip,
                    packets: vec![p],
                    session_id: None,
                    sni: None,
                });
            }
        }
    }
    flows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::fixtures::{tcp_frame, PcapBuilder, CLIENT, SERVER};
    use crate::ingest::pcap::parse_pcap;

    fn packets(frames: &[(u32, [u8; 4], u16, [u8; 4], u16)]) -> Vec<PacketRecord> {
        let mut b = PcapBuilder::new();
        for &(t, s, sp, d, dp) in frames {
            b = b.frame(t, 0, &tcp_frame(s, sp, d, dp, b"x"));
        }
        parse_pcap(&b.finish()).unwrap().0
    }

    #[test]
    fn interleaved_conversations_and_directions() {
        let ps = packets(&[
            (1, CLIENT, 1000, SERVER, 443),
            (2, CLIENT, 1001, SERVER, 443),
            (3, SERVER, 443, CLIENT, 1000),
            (4, SERVER, 443, CLIENT, 1001),
            (5, CLIENT, 1000, SERVER, 443),
        ]);
        let flows = assemble_flows(ps, DEFAULT_IDLE_TIMEOUT);
        assert_eq!(flows.len(), 2);
        assert_eq!(flows[0].packets.len(), 3);
        assert_eq!(flows[1].packets.len(), 2);
        assert_eq!(flows[0].client, IpAddr::from(CLIENT));
        assert_eq!(flows.iter().map(|f| f.packets.len()).sum::<usize>(), 5);
    }

    #[test]
    fn idle_gap_splits_a_conversation() {
        let ps = packets(&[
            (10, CLIENT, 1000, SERVER, 443),
            (70, SERVER, 443, CLIENT, 1000),
            (131, CLIENT, 1000, SERVER, 443),
        ]);
        let flows = assemble_flows(ps, 60.0);
        assert_eq!(flows.iter().map(|f| f.packets.len()).collect::<Vec<_>>(), vec![2, 1]);
    }

    #[test]
    fn key_is_direction_free() {
        let ps = packets(&[(1, CLIENT, 1000, SERVER, 443), (2, SERVER, 443, CLIENT, 1000)]);
        assert_eq!(FlowKey::of(&ps[0]), FlowKey::of(&ps[1]));
        let k = FlowKey::of(&ps[0]);
        assert_eq!(k.salted_hash("s"), k.salted_hash("s"));
        assert_ne!(k.salted_hash("s"), k.salted_hash("t"));
    }
}
