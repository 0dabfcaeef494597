//! Canonical dataset files and CSV import.
//!
//! Binary layout, little-endian: magic `ETCNASDS`, version `u32`,
//! sample count `u64`, feature length `u32`, class count `u32`, then per
//! class a `u16` byte length and UTF-8 name, then per sample the feature
//! bytes followed by a `u32` label.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::IngestError;
use crate::data::Dataset;

pub const DATASET_MAGIC: &[u8; 8] = b"ETCNASDS";
pub const DATASET_VERSION: u32 = 1;

pub fn encode_dataset(data: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + data.len() * (data.feature_len() + 4));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    out.extend_from_slice(&(data.feature_len() as u32).to_le_bytes());
    out.extend_from_slice(&(data.num_classes() as u32).to_le_bytes());
    for name in data.class_names() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for i in 0..data.len() {
        out.extend_from_slice(data.row(i));
        out.extend_from_slice(&(data.label(i) as u32).to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IngestError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(IngestError::TruncatedDataset { offset: self.at })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, IngestError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, IngestError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, IngestError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset, IngestError> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(8).ok() != Some(&DATASET_MAGIC[..]) {
        return Err(IngestError::MagicMismatch);
    }
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(IngestError::UnsupportedVersion(version));
    }
    let n = r.u64()? as usize;
    let feature_len = r.u32()? as usize;
    let classes = r.u32()? as usize;
    let mut names = Vec::with_capacity(classes);
    for _ in 0..classes {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| IngestError::TruncatedDataset { offset: r.at })?;
        names.push(name.to_string());
    }
    let mut data = Dataset::new(feature_len, names);
    for _ in 0..n {
        let row = r.take(feature_len)?;
        let label = r.u32()? as usize;
        data.push(row, label)?;
    }
    if r.at != bytes.len() {
        return Err(IngestError::TrailingBytes(bytes.len() - r.at));
    }
    Ok(data)
}

/// Writes atomically through a temporary sibling.
pub fn write_dataset(data: &Dataset, path: &Path) -> Result<(), IngestError> {
    let io = |e| IngestError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(&encode_dataset(data)).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn read_dataset(path: &Path) -> Result<Dataset, IngestError> {
    let bytes = fs::read(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    decode_dataset(&bytes)
}

/// Rows of comma-separated byte values followed by a class name. A first
/// row whose leading field is not a byte is a header. Class indices follow
/// the sorted class names.
pub fn import_csv(text: &str) -> Result<Dataset, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<(usize, Vec<u8>, String)> = Vec::new();
    let mut expected: Option<usize> = None;
    for (i, rec) in reader.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| IngestError::Csv(e.to_string()))?;
        if rec.is_empty() || (rec.len() == 1 && rec[0].is_empty()) {
            continue;
        }
        let features = rec.len() - 1;
        if i == 0 && rec[0].parse::<u8>().is_err() {
            expected = Some(features);
            continue;
        }
        let want = *expected.get_or_insert(features);
        if features != want {
            return Err(IngestError::LengthMismatch {
                row: line,
                expected: want,
                found: features,
            });
        }
        let bytes = rec
            .iter()
            .take(features)
            .enumerate()
            .map(|(col, v)| {
                v.parse::<u8>().map_err(|_| IngestError::BadValue {
                    row: line,
                    column: col + 1,
                    value: v.to_string(),
                })
            })
            .collect::<Result<Vec<u8>, _>>()?;
        rows.push((line, bytes, rec[features].to_string()));
    }
    let names: Vec<String> = rows
        .iter()
        .map(|(_, _, c)| c.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut data = Dataset::new(expected.unwrap_or(0), names.clone());
    for (_, bytes, class) in rows {
        let label = names.binary_search(&class).expect("collected above");
        data.push(&bytes, label)?;
    }
    Ok(data)
}
