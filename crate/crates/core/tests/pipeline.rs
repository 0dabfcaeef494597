use etcnas_core::controllers::{read_report, Strategy};
use etcnas_core::ingest::fixtures::*;
use etcnas_core::ingest::{parse_pcap, preprocess, read_dataset, split, write_dataset, Capture, LabelTable, PreprocessConfig};
use etcnas_core::orchestrator::{run_job, SearchJob, REPORT_FILE};
use etcnas_core::space::{SearchSpace, SpaceConfig};

/// Handshakes of two services that differ in certificate size and cipher.
fn two_service_capture(flows_per_service: u16) -> Vec<u8> {
    let mut b = PcapBuilder::new();
    for i in 0..flows_per_service {
        for (s, (host, cert, cipher)) in [("video.example.com", 300, 0xc02f), ("mail.example.org", 900, 0x009c)].into_iter().enumerate() {
            let port = 40000 + 2 * i + s as u16;
            let sid = [i as u8 + 1; 32];
            let t = 1_700_000_000 + 10 * u32::from(i) + s as u32 * 5;
            b = b
                .frame(t, 0, &tcp_frame(CLIENT, port, SERVER, 443, &client_hello(Some(host), &sid, &[cipher])))
                .frame(t, 1000, &tcp_frame(SERVER, 443, CLIENT, port, &server_hello(&sid, cipher)))
                .frame(t, 2000, &tcp_frame(SERVER, 443, CLIENT, port, &opaque_handshake(11, cert)));
        }
    }
    b.finish()
}

#[test]
fn capture_to_search_report() {
    let bytes = two_service_capture(30);
    let (packets, stats) = parse_pcap(&bytes).unwrap();
    let table = LabelTable::parse("video\\.example\\.com$,video\nmail\\.example\\.org$,mail\n").unwrap();
    let cfg = PreprocessConfig {
        cutoff: 16,
        ..Default::default()
    };
    let pre = preprocess(vec![Capture { id: "two".into(), packets, stats }], &table, None, &cfg).unwrap();
    assert_eq!(pre.dataset.len(), 60);
    assert_eq!(pre.dataset.class_counts(), vec![30, 30]);
    assert_eq!(pre.counters.labeled(), 60);

    let dir = tempfile::tempdir().unwrap();
    let ds_path = dir.path().join("flows.ds");
    write_dataset(&pre.dataset, &ds_path).unwrap();
    let data = read_dataset(&ds_path).unwrap();
    assert_eq!(data, pre.dataset);

    let parts = split(&data, 0.8, 1);
    let job = SearchJob {
        space: SearchSpace::Cell(SpaceConfig {
            input_length: data.feature_len(),
            num_classes: 2,
            nodes_per_cell: 2,
            initial_filters: 4,
            ..Default::default()
        }),
        strategy: Strategy::Ea,
        trials: 3,
        child_epochs: Some(3),
        batch_size: 16,
        ..Default::default()
    };
    let out_dir = dir.path().join("run");
    let out = run_job(&job, &parts.train, Some(&parts.test), Some(&out_dir)).unwrap();
    let report = read_report(&out_dir.join(REPORT_FILE)).unwrap();
    assert_eq!(report.records.len(), 3);
    assert_eq!(out.test.unwrap().confusion.total(), parts.test.len() as u64);
}
