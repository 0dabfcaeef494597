//! Search reports as JSON lines: a header object, then one trial record per
//! line in completion order. Each line is flushed as it is written, so a
//! crashed run leaves a readable prefix.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Strategy, TrialRecord};
use crate::space::SearchSpace;

pub const REPORT_SCHEMA: &str = "etcnas.report/1";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("unknown report schema `{0}`")]
    Schema(String),
    #[error("report is empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub schema: String,
    pub strategy: Strategy,
    pub space: SearchSpace,
    pub trials: usize,
    pub seed: u64,
    pub child_epochs: usize,
    /// Partial training: children are trained for a few epochs and only the
    /// finalists continue.
    pub partial: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchReport {
    pub header: ReportHeader,
    pub records: Vec<TrialRecord>,
}

pub struct ReportWriter {
    file: File,
}

impl ReportWriter {
    pub fn create(path: &Path, header: &ReportHeader) -> Result<Self, ReportError> {
        let mut w = Self {
            file: File::create(path)?,
        };
        w.write_line(header)?;
        Ok(w)
    }

    /// Opens an existing report for appending after cutting any torn final
    /// line.
    pub fn resume(path: &Path) -> Result<Self, ReportError> {
        let bytes = std::fs::read(path)?;
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
        let file = OpenOptions::new().append(true).open(path)?;
        file.set_len(keep as u64)?;
        Ok(Self { file })
    }

    pub fn record(&mut self, record: &TrialRecord) -> Result<(), ReportError> {
        self.write_line(record)
    }

    fn write_line(&mut self, value: &impl Serialize) -> Result<(), ReportError> {
        let mut line = serde_json::to_string(value).map_err(|source| ReportError::Parse { line: 0, source })?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        Ok(())
    }
}

/// Reads a report. A final line without a newline is an interrupted write
/// and is dropped.
pub fn read_report(path: &Path) -> Result<SearchReport, ReportError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    let mut buf = String::new();
    while reader.read_line(&mut buf)? > 0 {
        if buf.ends_with('\n') {
            lines.push(buf.trim_end().to_string());
        }
        buf.clear();
    }
    let mut iter = lines.iter().enumerate().filter(|(_, l)| !l.is_empty());
    let (_, first) = iter.next().ok_or(ReportError::Empty)?;
    let header: ReportHeader =
        serde_json::from_str(first).map_err(|source| ReportError::Parse { line: 1, source })?;
    if header.schema != REPORT_SCHEMA {
        return Err(ReportError::Schema(header.schema));
    }
    let records = iter
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| ReportError::Parse { line: i + 1, source }))
        .collect::<Result<_, _>>()?;
    Ok(SearchReport { header, records })
}
