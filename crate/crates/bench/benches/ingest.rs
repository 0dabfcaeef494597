use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use etcnas_core::ingest::fixtures::*;
use etcnas_core::ingest::{parse_pcap, preprocess, Capture, LabelTable, PreprocessConfig};

/// `flows` TLS handshakes of three packets each.
fn capture(flows: u16) -> Vec<u8> {
    let mut b = PcapBuilder::new();
    for i in 0..flows {
        let sid = [(i % 251) as u8; 32];
        let port = 1024 + i;
        let t = 1_700_000_000 + u32::from(i);
        b = b
            .frame(t, 0, &tcp_frame(CLIENT, port, SERVER, 443, &client_hello(Some("cdn.example.com"), &sid, &FIXTURE_CIPHERS)))
            .frame(t, 10, &tcp_frame(SERVER, 443, CLIENT, port, &server_hello(&sid, 0xc02f)))
            .frame(t, 20, &tcp_frame(SERVER, 443, CLIENT, port, &opaque_handshake(11, 1200)));
    }
    b.finish()
}

fn ingest(c: &mut Criterion) {
    let bytes = capture(1000);
    let mut g = c.benchmark_group("ingest");
    g.throughput(Throughput::Bytes(bytes.len() as u64));
    g.bench_function("parse_pcap/3000-packets", |b| b.iter(|| black_box(parse_pcap(&bytes).unwrap())));
    let table = LabelTable::parse("example\\.com$,cdn\n").unwrap();
    let cfg = PreprocessConfig::default();
    g.bench_function("preprocess/1000-flows", |b| {
        b.iter(|| {
            let (packets, stats) = parse_pcap(&bytes).unwrap();
            let capture = Capture { id: "bench".into(), packets, stats };
            black_box(preprocess(vec![capture], &table, None, &cfg).unwrap())
        })
    });
    g.finish();
}

criterion_group!(benches, ingest);
criterion_main!(benches);
