//! QUIC Initial packets, kept as raw bytes; nothing is decrypted.

use super::flow::Flow;
use super::pcap::Protocol;
use super::IngestError;

const QUIC_V2: u32 = 0x6b33_43cf;

/// Whether a UDP payload starts with a long-header Initial packet.
pub fn is_initial(payload: &[u8]) -> bool {
    if payload.len() < 7 || payload[0] & 0xc0 != 0xc0 {
        return false;
    }
    let version = u32::from_be_bytes(payload[1..5].try_into().expect("4 bytes"));
    let kind = (payload[0] >> 4) & 0x03;
    match version {
        QUIC_V2 => kind == 1,
        // v1, drafts and gQUIC with the IETF invariant header.
        0 => false,
        _ => kind == 0,
    }
}

/// First Initial packet's UDP payload, cut or zero-padded to `cutoff`.
pub fn extract_quic_features(flow: &Flow, cutoff: usize) -> Result<Vec<u8>, IngestError> {
    if flow.key.protocol != Protocol::Udp {
        return Err(IngestError::NotQuic);
    }
    let p = flow
        .packets
        .iter()
        .find(|p| is_initial(&p.payload))
        .ok_or(IngestError::NotQuic)?;
    let mut out = vec![0; cutoff];
    let n = p.payload.len().min(cutoff);
    out[..n].copy_from_slice(&p.payload[..n]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::fixtures::*;
    use crate::ingest::flow::assemble_flows;
    use crate::ingest::pcap::parse_pcap;

    fn flow_of(payloads: &[Vec<u8>]) -> Flow {
        let mut b = PcapBuilder::new();
        for (i, p) in payloads.iter().enumerate() {
            b = b.frame(1, i as u32, &udp_frame(CLIENT, 5555, SERVER, 443, p));
        }
        assemble_flows(parse_pcap(&b.finish()).unwrap().0, 60.0).remove(0)
    }

    #[test]
    fn initial_is_padded_or_cut() {
        let short = extract_quic_features(&flow_of(&[quic_initial(300)]), 600).unwrap();
        assert_eq!(short.len(), 600);
        assert!(short[0] & 0x80 != 0);
        assert!(short[300..].iter().all(|&b| b == 0));
        let long = extract_quic_features(&flow_of(&[quic_short(40), quic_initial(1200)]), 600).unwrap();
        assert_eq!(long, quic_initial(1200)[..600].to_vec());
    }

    #[test]
    fn short_headers_are_not_quic_initials() {
        assert!(matches!(
            extract_quic_features(&flow_of(&[quic_short(100), quic_short(50)]), 600),
            Err(IngestError::NotQuic)
        ));
        let mut v2 = quic_initial(64);
        v2[1..5].copy_from_slice(&QUIC_V2.to_be_bytes());
        assert!(!is_initial(&v2));
        v2[0] = 0xd3;
        assert!(is_initial(&v2));
    }
}
