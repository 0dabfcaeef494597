//! Packet captures to labeled fixed-length byte datasets: parse, assemble
//! flows, extract handshake bytes, label by server name, obfuscate.

mod dataset_io;
pub mod fixtures;
mod flow;
mod label;
mod pcap;
mod quic;
mod tls;

use std::io;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{stratified_split, DataError, Dataset};

pub use dataset_io::{
    decode_dataset, encode_dataset, import_csv, read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION,
};
pub use flow::{assemble_flows, Flow, FlowKey, DEFAULT_IDLE_TIMEOUT};
pub use label::{label_flows, ExternalLabels, FlowLabel, LabelSource, LabelTable, DEFAULT_ADJACENCY_WINDOW};
pub use pcap::{parse_pcap, read_pcap, PacketRecord, PcapStats, Protocol, LINKTYPE_ETHERNET, LINKTYPE_RAW};
pub use quic::{extract_quic_features, is_initial};
pub use tls::{extract_tls_features, obfuscate, Anchor, TlsFeatures, DEFAULT_CUTOFF, HANDSHAKE_PACKETS};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("not a pcap file (magic {0:#010x})")]
    BadMagic(u32),
    #[error("pcap global header is truncated")]
    TruncatedHeader,
    #[error("unsupported pcap link type {0} (expected 1 Ethernet or 101 raw IP)")]
    UnsupportedLinkType(u32),
    #[error("no TLS handshake packet in flow")]
    NoHandshakeFound,
    #[error("flow carries no QUIC Initial packet")]
    NotQuic,
    #[error("label table line {line}: invalid pattern `{pattern}`: {detail}")]
    BadPattern { line: usize, pattern: String, detail: String },
    #[error("label table line {line}: {detail}")]
    BadLabelTable { line: usize, detail: String },
    #[error("not a dataset file (magic mismatch)")]
    MagicMismatch,
    #[error("unsupported dataset version {0}")]
    UnsupportedVersion(u32),
    #[error("dataset truncated at byte {offset}")]
    TruncatedDataset { offset: usize },
    #[error("{0} unexpected bytes after the last sample")]
    TrailingBytes(usize),
    #[error("row {row}: expected {expected} features, found {found}")]
    LengthMismatch { row: usize, expected: usize, found: usize },
    #[error("row {row}, column {column}: `{value}` is not a byte value")]
    BadValue { row: usize, column: usize, value: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    #[default]
    Tls,
    Quic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub kind: FlowKind,
    /// Seconds of silence that end a flow.
    pub idle_timeout: f64,
    /// Seconds between flow starts for start-time label propagation.
    pub adjacency_window: f64,
    pub cutoff: usize,
    pub handshake_packets: usize,
    pub anchor: Anchor,
    /// Salt of the flow hashes kept as provenance.
    pub salt: String,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            kind: FlowKind::Tls,
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
            adjacency_window: DEFAULT_ADJACENCY_WINDOW,
            cutoff: DEFAULT_CUTOFF,
            handshake_packets: HANDSHAKE_PACKETS,
            anchor: Anchor::Record,
            salt: String::new(),
        }
    }
}

impl PreprocessConfig {
    pub fn feature_len(&self) -> usize {
        match self.kind {
            FlowKind::Tls => self.cutoff * self.handshake_packets,
            FlowKind::Quic => self.cutoff,
        }
    }
}

/// Packets of one capture file.
#[derive(Debug, Clone)]
pub struct Capture {
    pub id: String,
    pub packets: Vec<PacketRecord>,
    pub stats: PcapStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub flow_hash: u64,
    pub capture: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledFlow {
    pub flow_hash: u64,
    pub capture: String,
    pub start: f64,
    pub protocol: Protocol,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessCounters {
    pub captures: usize,
    pub frames: usize,
    pub packets: usize,
    pub non_ip: usize,
    pub other_transport: usize,
    pub truncated: usize,
    pub flows: usize,
    /// Flows of the configured kind's transport.
    pub candidate_flows: usize,
    pub no_handshake: usize,
    pub not_quic: usize,
    pub labeled_sni: usize,
    pub labeled_session_id: usize,
    pub labeled_start_time: usize,
    pub labeled_external: usize,
    pub unlabeled: usize,
}

impl PreprocessCounters {
    pub fn labeled(&self) -> usize {
        self.labeled_sni + self.labeled_session_id + self.labeled_start_time + self.labeled_external
    }

    pub fn skipped(&self) -> usize {
        self.no_handshake + self.not_quic
    }
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub dataset: Dataset,
    /// One entry per dataset row.
    pub provenance: Vec<Provenance>,
    pub unlabeled: Vec<UnlabeledFlow>,
    pub counters: PreprocessCounters,
}

struct Extracted {
    flow: Flow,
    features: Vec<u8>,
}

#[derive(Default)]
struct CaptureResult {
    extracted: Vec<Extracted>,
    flows: usize,
    candidates: usize,
    no_handshake: usize,
    not_quic: usize,
}

fn extract_capture(packets: Vec<PacketRecord>, cfg: &PreprocessConfig) -> CaptureResult {
    let mut out = CaptureResult::default();
    let flows = assemble_flows(packets, cfg.idle_timeout);
    out.flows = flows.len();
    let want = match cfg.kind {
        FlowKind::Tls => Protocol::Tcp,
        FlowKind::Quic => Protocol::Udp,
    };
    for mut flow in flows.into_iter().filter(|f| f.key.protocol == want) {
        out.candidates += 1;
        match cfg.kind {
            FlowKind::Tls => match extract_tls_features(&flow, cfg.cutoff, cfg.handshake_packets, cfg.anchor) {
                Ok(f) => {
                    flow.sni = f.sni.clone();
                    flow.session_id = f.session_id.clone();
                    let features = obfuscate(&f.bytes, &f.sensitive);
                    out.extracted.push(Extracted { flow, features });
                }
                Err(_) => out.no_handshake += 1,
            },
            FlowKind::Quic => match extract_quic_features(&flow, cfg.cutoff) {
                Ok(features) => out.extracted.push(Extracted { flow, features }),
                Err(_) => out.not_quic += 1,
            },
        }
    }
    out
}

/// Runs the pipeline over captures, each assembled independently and in
/// parallel. Class indices follow the label table, then any further classes
/// of the external map in sorted order.
pub fn preprocess(
    captures: Vec<Capture>,
    table: &LabelTable,
    external: Option<&ExternalLabels>,
    cfg: &PreprocessConfig,
) -> Result<Preprocessed, IngestError> {
    let mut counters = PreprocessCounters {
        captures: captures.len(),
        ..Default::default()
    };
    let mut ids = Vec::with_capacity(captures.len());
    let mut packet_sets = Vec::with_capacity(captures.len());
    for c in captures {
        counters.frames += c.stats.frames;
        counters.packets += c.stats.packets;
        counters.non_ip += c.stats.non_ip;
        counters.other_transport += c.stats.other_transport;
        counters.truncated += c.stats.truncated;
        ids.push(c.id);
        packet_sets.push(c.packets);
    }
    let results: Vec<CaptureResult> = thread::scope(|s| {
        let handles: Vec<_> = packet_sets
            .into_iter()
            .map(|p| s.spawn(move || extract_capture(p, cfg)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("capture worker panicked")).collect()
    });

    let mut classes: Vec<String> = table.classes().to_vec();
    let class_index = |classes: &mut Vec<String>, name: &str| match classes.iter().position(|c| c == name) {
        Some(i) => i,
        None => {
            classes.push(name.to_string());
            classes.len() - 1
        }
    };
    let mut rows: Vec<(Vec<u8>, usize, Provenance)> = Vec::new();
    let mut unlabeled = Vec::new();
    let mut pending_external: Vec<(Vec<u8>, String, Provenance)> = Vec::new();
    for (id, r) in ids.iter().zip(results) {
        counters.flows += r.flows;
        counters.candidate_flows += r.candidates;
        counters.no_handshake += r.no_handshake;
        counters.not_quic += r.not_quic;
        let flows: Vec<Flow> = r.extracted.iter().map(|e| e.flow.clone()).collect();
        let labels = label_flows(&flows, table, cfg.adjacency_window);
        for (e, label) in r.extracted.into_iter().zip(labels) {
            let hash = e.flow.key.salted_hash(&cfg.salt);
            let provenance = Provenance {
                flow_hash: hash,
                capture: id.clone(),
            };
            match label {
                Some(l) => {
                    match l.source {
                        LabelSource::Sni => counters.labeled_sni += 1,
                        LabelSource::SessionId => counters.labeled_session_id += 1,
                        LabelSource::StartTime => counters.labeled_start_time += 1,
                        LabelSource::External => counters.labeled_external += 1,
                    }
                    rows.push((e.features, l.class, provenance));
                }
                None => match external.and_then(|m| m.get(hash)) {
                    Some(name) => {
                        counters.labeled_external += 1;
                        pending_external.push((e.features, name.to_string(), provenance));
                    }
                    None => {
                        counters.unlabeled += 1;
                        unlabeled.push(UnlabeledFlow {
                            flow_hash: hash,
                            capture: id.clone(),
                            start: e.flow.first_timestamp(),
                            protocol: e.flow.key.protocol,
                        });
                    }
                },
            }
        }
    }
    let mut extra: Vec<&str> = pending_external.iter().map(|(_, n, _)| n.as_str()).collect();
    extra.sort_unstable();
    extra.dedup();
    for name in extra {
        class_index(&mut classes, name);
    }
    let externals: Vec<(Vec<u8>, usize, Provenance)> = pending_external
        .into_iter()
        .map(|(f, name, p)| {
            let c = class_index(&mut classes, &name);
            (f, c, p)
        })
        .collect();
    rows.extend(externals);

    let mut dataset = Dataset::new(cfg.feature_len(), classes);
    let mut provenance = Vec::with_capacity(rows.len());
    for (features, label, p) in rows {
        dataset.push(&features, label)?;
        provenance.push(p);
    }
    Ok(Preprocessed {
        dataset,
        provenance,
        unlabeled,
        counters,
    })
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Dataset,
    pub test: Dataset,
    pub empty_classes: Vec<usize>,
    pub small_classes: Vec<usize>,
}

/// Stratified seeded train/test split; per class `min(round(f·n), n − 1)`
/// samples train. Degenerate classes are reported and logged.
pub fn split(data: &Dataset, train_fraction: f64, seed: u64) -> DatasetSplit {
    let s = stratified_split(data, train_fraction, seed);
    for &c in &s.empty_classes {
        log::warn!("class {} has no samples", data.class_names()[c]);
    }
    for &c in &s.small_classes {
        log::warn!("class {} is too small for a {train_fraction} split", data.class_names()[c]);
    }
    DatasetSplit {
        train: data.subset(&s.first),
        test: data.subset(&s.second),
        empty_classes: s.empty_classes,
        small_classes: s.small_classes,
    }
}
