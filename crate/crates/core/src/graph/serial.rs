//! Line-oriented architecture descriptor.
//!
//! ```text
//! schema etcnas.model-graph/1
//! classes 2
//! node 0 Input length=600 channels=1
//! node 1 Conv1D kernel_size=1 filters=64 stride=1
//! edge 0 1 0
//! ```
//!
//! Nodes are listed in graph order, edges as `src dst slot`. Blank lines and
//! lines starting with `#` are ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use super::{Edge, GraphError, LayerSpec, ModelGraph, Node, NodeId};

pub const SCHEMA_TAG: &str = "etcnas.model-graph/1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SerialError {
    #[error("line {line}: {field}: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },
    #[error("unsupported schema {found:?}, expected {expected:?}")]
    SchemaVersionMismatch { found: String, expected: String },
    #[error("invalid graph: {0}")]
    Invalid(#[from] GraphError),
}

pub(super) fn to_text(graph: &ModelGraph) -> String {
    let mut out = String::new();
    writeln!(out, "schema {SCHEMA_TAG}").unwrap();
    writeln!(out, "classes {}", graph.num_classes()).unwrap();
    for n in graph.nodes() {
        writeln!(out, "node {} {}", n.id, layer_to_text(&n.layer)).unwrap();
    }
    for e in graph.edges() {
        writeln!(out, "edge {} {} {}", e.src, e.dst, e.slot).unwrap();
    }
    out
}

fn layer_to_text(layer: &LayerSpec) -> String {
    let name = format!("{:?}", layer.kind());
    let attrs: Vec<String> = match *layer {
        LayerSpec::Input {
            length,
            channels,
            reshape,
        } => {
            let mut v = vec![format!("length={length}"), format!("channels={channels}")];
            if let Some([h, w]) = reshape {
                v.push(format!("reshape={h}x{w}"));
            }
            v
        }
        LayerSpec::Conv1D {
            kernel_size,
            filters,
            stride,
        }
        | LayerSpec::Conv2D {
            kernel_size,
            filters,
            stride,
        }
        | LayerSpec::SeparableConv1D {
            kernel_size,
            filters,
            stride,
        } => vec![
            format!("kernel_size={kernel_size}"),
            format!("filters={filters}"),
            format!("stride={stride}"),
        ],
        LayerSpec::Dense { units } => vec![format!("units={units}")],
        LayerSpec::Dropout { rate } => vec![format!("rate={rate:?}")],
        LayerSpec::MaxPool1D { pool_size, stride }
        | LayerSpec::AvgPool1D { pool_size, stride }
        | LayerSpec::MaxPool2D { pool_size, stride }
        | LayerSpec::AvgPool2D { pool_size, stride } => {
            vec![format!("pool_size={pool_size}"), format!("stride={stride}")]
        }
        _ => Vec::new(),
    };
    if attrs.is_empty() {
        name
    } else {
        format!("{name} {}", attrs.join(" "))
    }
}

struct LineCtx {
    line: usize,
}

impl LineCtx {
    fn err(&self, field: &str, message: impl Into<String>) -> SerialError {
        SerialError::Parse {
            line: self.line,
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn number<T: std::str::FromStr>(&self, field: &str, raw: Option<&str>) -> Result<T, SerialError> {
        let raw = raw.ok_or_else(|| self.err(field, "missing value"))?;
        raw.parse()
            .map_err(|_| self.err(field, format!("cannot parse {raw:?}")))
    }
}

pub(super) fn from_text(text: &str) -> Result<ModelGraph, SerialError> {
    let mut schema_seen = false;
    let mut classes: Option<usize> = None;
    let mut nodes: Vec<Node> = Vec::new();
    let mut edge_lines: Vec<(usize, Edge)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let ctx = LineCtx { line: idx + 1 };
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut words = line.split_whitespace();
        let keyword = words.next().unwrap();
        if !schema_seen && keyword != "schema" {
            return Err(ctx.err("schema", "document must start with a schema line"));
        }
        match keyword {
            "schema" => {
                let tag = words.next().ok_or_else(|| ctx.err("schema", "missing tag"))?;
                if tag != SCHEMA_TAG {
                    return Err(SerialError::SchemaVersionMismatch {
                        found: tag.to_string(),
                        expected: SCHEMA_TAG.to_string(),
                    });
                }
                schema_seen = true;
            }
            "classes" => classes = Some(ctx.number("classes", words.next())?),
            "node" => {
                let id: NodeId = ctx.number("node.id", words.next())?;
                let kind = words.next().ok_or_else(|| ctx.err("node.kind", "missing kind"))?;
                let attrs = parse_attrs(&ctx, words)?;
                let layer = layer_from_text(&ctx, kind, &attrs)?;
                nodes.push(Node { id, layer });
            }
            "edge" => {
                let src = ctx.number("edge.src", words.next())?;
                let dst = ctx.number("edge.dst", words.next())?;
                let slot = ctx.number("edge.slot", words.next())?;
                edge_lines.push((ctx.line, Edge { src, dst, slot }));
            }
            other => return Err(ctx.err("keyword", format!("unknown keyword {other:?}"))),
        }
    }
    if !schema_seen {
        return Err(SerialError::Parse {
            line: 0,
            field: "schema".into(),
            message: "empty document".into(),
        });
    }
    let classes = classes.ok_or_else(|| SerialError::Parse {
        line: 0,
        field: "classes".into(),
        message: "missing classes line".into(),
    })?;

    let ids: BTreeSet<NodeId> = nodes.iter().map(|n| n.id).collect();
    for (line, e) in &edge_lines {
        let ctx = LineCtx { line: *line };
        if !ids.contains(&e.src) {
            return Err(ctx.err("edge.src", format!("no node with id {}", e.src)));
        }
        if !ids.contains(&e.dst) {
            return Err(ctx.err("edge.dst", format!("no node with id {}", e.dst)));
        }
    }
    let edges = edge_lines.into_iter().map(|(_, e)| e).collect();
    Ok(ModelGraph::from_parts(nodes, edges, classes)?)
}

fn parse_attrs<'a>(
    ctx: &LineCtx,
    words: impl Iterator<Item = &'a str>,
) -> Result<BTreeMap<&'a str, &'a str>, SerialError> {
    let mut attrs = BTreeMap::new();
    for w in words {
        let (k, v) = w
            .split_once('=')
            .ok_or_else(|| ctx.err("node.attributes", format!("expected key=value, found {w:?}")))?;
        if attrs.insert(k, v).is_some() {
            return Err(ctx.err(k, "duplicate attribute"));
        }
    }
    Ok(attrs)
}

fn layer_from_text(
    ctx: &LineCtx,
    kind: &str,
    attrs: &BTreeMap<&str, &str>,
) -> Result<LayerSpec, SerialError> {
    let mut used: Vec<&str> = Vec::new();
    let mut get = |key: &'static str| {
        used.push(key);
        attrs.get(key).copied()
    };
    let mut num = |key: &'static str| -> Result<usize, SerialError> { ctx.number(key, get(key)) };

    let layer = match kind {
        "Input" => {
            let length = num("length")?;
            let channels = num("channels")?;
            let reshape = match get("reshape") {
                None => None,
                Some(raw) => {
                    let (h, w) = raw
                        .split_once('x')
                        .ok_or_else(|| ctx.err("reshape", "expected HxW"))?;
                    Some([ctx.number("reshape", Some(h))?, ctx.number("reshape", Some(w))?])
                }
            };
            LayerSpec::Input {
                length,
                channels,
                reshape,
            }
        }
        "Conv1D" | "Conv2D" | "SeparableConv1D" => {
            let kernel_size = num("kernel_size")?;
            let filters = num("filters")?;
            let stride = num("stride")?;
            match kind {
                "Conv1D" => LayerSpec::Conv1D {
                    kernel_size,
                    filters,
                    stride,
                },
                "Conv2D" => LayerSpec::Conv2D {
                    kernel_size,
                    filters,
                    stride,
                },
                _ => LayerSpec::SeparableConv1D {
                    kernel_size,
                    filters,
                    stride,
                },
            }
        }
        "Dense" => LayerSpec::Dense {
            units: num("units")?,
        },
        "Dropout" => LayerSpec::Dropout {
            rate: ctx.number("rate", get("rate"))?,
        },
        "MaxPool1D" | "AvgPool1D" | "MaxPool2D" | "AvgPool2D" => {
            let pool_size = num("pool_size")?;
            let stride = num("stride")?;
            match kind {
                "MaxPool1D" => LayerSpec::MaxPool1D { pool_size, stride },
                "AvgPool1D" => LayerSpec::AvgPool1D { pool_size, stride },
                "MaxPool2D" => LayerSpec::MaxPool2D { pool_size, stride },
                _ => LayerSpec::AvgPool2D { pool_size, stride },
            }
        }
        "BatchNorm" => LayerSpec::BatchNorm,
        "ReLU" => LayerSpec::ReLU,
        "ELU" => LayerSpec::ELU,
        "Add" => LayerSpec::Add,
        "Concat" => LayerSpec::Concat,
        "Flatten" => LayerSpec::Flatten,
        "GlobalAvgPool" => LayerSpec::GlobalAvgPool,
        "Softmax" => LayerSpec::Softmax,
        "Identity" => LayerSpec::Identity,
        "Shift" => LayerSpec::Shift,
        other => return Err(ctx.err("node.kind", format!("unknown layer kind {other:?}"))),
    };
    if let Some(extra) = attrs.keys().find(|k| !used.contains(k)) {
        return Err(ctx.err(extra, format!("attribute not valid for {kind}")));
    }
    Ok(layer)
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;

    fn bare() -> ModelGraph {
        let mut b = GraphBuilder::new();
        let x = b.add(
            LayerSpec::Input {
                length: 4,
                channels: 1,
                reshape: None,
            },
            &[],
        );
        let f = b.add(LayerSpec::Flatten, &[x]);
        let d = b.add(LayerSpec::Dense { units: 2 }, &[f]);
        b.add(LayerSpec::Softmax, &[d]);
        b.finish(2).unwrap()
    }

    #[test]
    fn minimal_round_trip() {
        let g = bare();
        let text = g.to_text();
        assert_eq!(ModelGraph::from_text(&text).unwrap(), g);
    }

    #[test]
    fn dangling_edge_reports_line() {
        let text = bare().to_text().replace("edge 2 3 0", "edge 2 9 0");
        match ModelGraph::from_text(&text) {
            Err(SerialError::Parse { line, field, .. }) => {
                assert_eq!(field, "edge.dst");
                assert_eq!(text.lines().nth(line - 1).unwrap(), "edge 2 9 0");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn schema_mismatch() {
        let text = bare().to_text().replace(SCHEMA_TAG, "etcnas.model-graph/0");
        assert!(matches!(
            ModelGraph::from_text(&text),
            Err(SerialError::SchemaVersionMismatch { .. })
        ));
    }

    #[test]
    fn bad_attribute_names_field() {
        let text = bare().to_text().replace("units=2", "units=two");
        match ModelGraph::from_text(&text) {
            Err(SerialError::Parse { line: 5, field, .. }) => assert_eq!(field, "units"),
            other => panic!("unexpected {other:?}"),
        }
        let text = bare().to_text().replace("units=2", "units=2 stride=1");
        assert!(matches!(
            ModelGraph::from_text(&text),
            Err(SerialError::Parse { .. })
        ));
    }

    #[test]
    fn dropout_rate_is_exact() {
        let mut b = GraphBuilder::new();
        let x = b.add(
            LayerSpec::Input {
                length: 4,
                channels: 1,
                reshape: Some([2, 2]),
            },
            &[],
        );
        let f = b.add(LayerSpec::Flatten, &[x]);
        let r = b.add(LayerSpec::Dropout { rate: 0.1 + 0.2 }, &[f]);
        let d = b.add(LayerSpec::Dense { units: 2 }, &[r]);
        b.add(LayerSpec::Softmax, &[d]);
        let g = b.finish(2).unwrap();
        assert_eq!(ModelGraph::from_text(&g.to_text()).unwrap(), g);
    }
}
