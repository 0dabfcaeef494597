use std::collections::HashMap;

use regex::Regex;

use super::flow::Flow;
use super::IngestError;

pub const DEFAULT_ADJACENCY_WINDOW: f64 = 1.0;

/// Ordered `(pattern, class)` rules over domain names; the first match wins.
#[derive(Debug, Clone)]
pub struct LabelTable {
    rules: Vec<(Regex, usize)>,
    classes: Vec<String>,
}

impl LabelTable {
    /// One `pattern,class` rule per line; the class is the text after the
    /// last comma. Blank lines and lines starting with `#` are skipped.
    /// Classes are indexed in order of first appearance.
    pub fn parse(text: &str) -> Result<Self, IngestError> {
        let mut rules = Vec::new();
        let mut classes: Vec<String> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (pattern, class) = line.rsplit_once(',').ok_or_else(|| IngestError::BadLabelTable {
                line: i + 1,
                detail: "expected `pattern,class`".into(),
            })?;
            let (pattern, class) = (pattern.trim(), class.trim());
            if class.is_empty() {
                return Err(IngestError::BadLabelTable {
                    line: i + 1,
                    detail: "empty class name".into(),
                });
            }
            let re = Regex::new(pattern).map_err(|e| IngestError::BadPattern {
                line: i + 1,
                pattern: pattern.to_string(),
                detail: regex_cause(&e),
            })?;
            let idx = match classes.iter().position(|c| c == class) {
                Some(k) => k,
                None => {
                    classes.push(class.to_string());
                    classes.len() - 1
                }
            };
            rules.push((re, idx));
        }
        if rules.is_empty() {
            return Err(IngestError::BadLabelTable {
                line: 0,
                detail: "no rules".into(),
            });
        }
        Ok(Self { rules, classes })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn classify(&self, domain: &str) -> Option<usize> {
        let domain = domain.to_ascii_lowercase();
        self.rules.iter().find(|(re, _)| re.is_match(&domain)).map(|&(_, c)| c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    Sni,
    SessionId,
    StartTime,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowLabel {
    pub class: usize,
    pub source: LabelSource,
}

/// Labels flows by SNI, then gives each unlabeled flow the class of a
/// directly labeled flow with the same session id or, failing that, of the
/// directly labeled flow from the same client whose start time is nearest
/// within `window` seconds (earlier flow on ties). Labels do not chain.
pub fn label_flows(flows: &[Flow], table: &LabelTable, window: f64) -> Vec<Option<FlowLabel>> {
    let direct: Vec<Option<usize>> = flows
        .iter()
        .map(|f| f.sni.as_deref().and_then(|s| table.classify(s)))
        .collect();
    let mut by_session: HashMap<&[u8], usize> = HashMap::new();
    for (f, d) in flows.iter().zip(&direct) {
        if let (Some(sid), Some(c)) = (&f.session_id, d) {
            by_session.entry(sid.as_slice()).or_insert(*c);
        }
    }
    flows
        .iter()
        .zip(&direct)
        .map(|(f, d)| {
            if let Some(class) = d {
                return Some(FlowLabel {
                    class: *class,
                    source: LabelSource::Sni,
                });
            }
            if let Some(&class) = f.session_id.as_deref().and_then(|s| by_session.get(s)) {
                return Some(FlowLabel {
                    class,
                    source: LabelSource::SessionId,
                });
            }
            let start = f.first_timestamp();
            flows
                .iter()
                .zip(&direct)
                .filter_map(|(g, d)| d.map(|c| (g, c)))
                .filter(|(g, _)| g.client == f.client && (g.first_timestamp() - start).abs() <= window)
                .min_by(|(a, _), (b, _)| {
                    (a.first_timestamp() - start)
                        .abs()
                        .total_cmp(&(b.first_timestamp() - start).abs())
                })
                .map(|(_, class)| FlowLabel {
                    class,
                    source: LabelSource::StartTime,
                })
        })
        .collect()
}

/// Flow-hash to class map for flows whose name is not visible, such as
/// QUIC. One `hash,class` line each, the hash in hex.
#[derive(Debug, Clone, Default)]
pub struct ExternalLabels {
    map: HashMap<u64, String>,
}

impl ExternalLabels {
    pub fn parse(text: &str) -> Result<Self, IngestError> {
        let mut map = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || IngestError::BadLabelTable {
                line: i + 1,
                detail: "expected `hexhash,class`".into(),
            };
            let (hash, class) = line.split_once(',').ok_or_else(bad)?;
            let hash = u64::from_str_radix(hash.trim().trim_start_matches("0x"), 16).map_err(|_| bad())?;
            map.insert(hash, class.trim().to_string());
        }
        Ok(Self { map })
    }

    pub fn get(&self, hash: u64) -> Option<&str> {
        self.map.get(&hash).map(String::as_str)
    }
}

/// Last line of a regex error: the cause without the caret diagram.
fn regex_cause(e: &regex::Error) -> String {
    let text = e.to_string();
    let last = text.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("");
    last.trim().trim_start_matches("error: ").to_string()
}
