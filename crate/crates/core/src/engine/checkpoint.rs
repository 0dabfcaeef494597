//! Checkpoint files: a text header (schema, training position, embedded graph
//! descriptor, tensor index) terminated by a `data` line, then every tensor as
//! little-endian `f64` at the offsets the index gives.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::optim::AdamState;
use super::{EngineError, ModelInstance, Tensor};
use crate::graph::ModelGraph;

pub const CHECKPOINT_MAGIC: &str = "etcnas.checkpoint/1";

struct Entry {
    name: String,
    offset: usize,
    shape: Vec<usize>,
}

pub fn encode_checkpoint(model: &ModelInstance) -> Vec<u8> {
    let mut named: Vec<(String, &Tensor)> = Vec::new();
    for (node, tensors) in model.graph().nodes().iter().zip(model.layer_params()) {
        for (t, tensor) in tensors.iter().enumerate() {
            named.push((format!("param.{}.{t}", node.id), tensor));
        }
    }
    let adam = model.optimizer();
    for (slot, (m, v)) in adam.m.iter().zip(&adam.v).enumerate() {
        named.push((format!("adam_m.{slot}"), m));
        named.push((format!("adam_v.{slot}"), v));
    }

    let graph = model.graph().to_text();
    let mut head = String::new();
    head.push_str(CHECKPOINT_MAGIC);
    head.push('\n');
    head.push_str(&format!("epoch {}\n", model.epoch()));
    head.push_str(&format!("adam_step {}\n", adam.step));
    head.push_str(&format!("graph {}\n", graph.lines().count()));
    head.push_str(&graph);
    if !graph.ends_with('\n') {
        head.push('\n');
    }
    head.push_str(&format!("tensors {}\n", named.len()));
    let mut offset = 0;
    for (name, t) in &named {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        head.push_str(&format!("{name} {offset} {}\n", dims.join(",")));
        offset += t.len();
    }
    head.push_str("data\n");

    let mut out = head.into_bytes();
    out.reserve(offset * 8);
    for (_, t) in &named {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelInstance, EngineError> {
    let bad = |msg: String| EngineError::Checkpoint(msg);
    let mut pos = 0;
    let mut next_line = || -> Result<&str, EngineError> {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated header".into()))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8".into()))
    };
    let field = |line: &str, key: &str| -> Result<usize, EngineError> {
        line.strip_prefix(key)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad(format!("expected `{key} <count>`, found `{line}`")))
    };

    let magic = next_line()?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad(format!("unknown schema `{magic}`, expected {CHECKPOINT_MAGIC}")));
    }
    let epoch = field(next_line()?, "epoch ")?;
    let step = field(next_line()?, "adam_step ")? as u64;
    let graph_lines = field(next_line()?, "graph ")?;
    let mut text = String::new();
    for _ in 0..graph_lines {
        text.push_str(next_line()?);
        text.push('\n');
    }
    let graph = ModelGraph::from_text(&text).map_err(|e| bad(format!("graph: {e}")))?;
    let count = field(next_line()?, "tensors ")?;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next_line()?;
        let parts: Vec<&str> = line.split(' ').collect();
        let [name, offset, dims] = parts[..] else {
            return Err(bad(format!("bad tensor entry `{line}`")));
        };
        let shape = if dims.is_empty() {
            Vec::new()
        } else {
            dims.split(',')
                .map(|d| d.parse().map_err(|_| bad(format!("bad dims in `{line}`"))))
                .collect::<Result<_, _>>()?
        };
        entries.push(Entry {
            name: name.to_string(),
            offset: offset.parse().map_err(|_| bad(format!("bad offset in `{line}`")))?,
            shape,
        });
    }
    if next_line()? != "data" {
        return Err(bad("missing data marker".into()));
    }
    let blob = &bytes[pos..];

    let read = |e: &Entry| -> Result<Tensor, EngineError> {
        let len: usize = e.shape.iter().product();
        let start = e.offset * 8;
        let raw = blob
            .get(start..start + len * 8)
            .ok_or_else(|| bad(format!("tensor {} exceeds the data blob", e.name)))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Tensor::from_vec(&e.shape, data))
    };

    let mut params: Vec<Vec<Tensor>> = vec![Vec::new(); graph.nodes().len()];
    let mut m = Vec::new();
    let mut v = Vec::new();
    for e in &entries {
        let t = read(e)?;
        let mut parts = e.name.split('.');
        match (parts.next(), parts.next(), parts.next()) {
            (Some("param"), Some(id), Some(_)) => {
                let id: u32 = id.parse().map_err(|_| bad(format!("bad tensor name {}", e.name)))?;
                let pos = graph
                    .nodes()
                    .iter()
                    .position(|n| n.id == id)
                    .ok_or_else(|| bad(format!("tensor {} names unknown node", e.name)))?;
                params[pos].push(t);
            }
            (Some("adam_m"), Some(_), None) => m.push(t),
            (Some("adam_v"), Some(_), None) => v.push(t),
            _ => return Err(bad(format!("unknown tensor {}", e.name))),
        }
    }
    ModelInstance::from_state(graph, params, AdamState { step, m, v }, epoch)
}

pub fn write_checkpoint(model: &ModelInstance, path: &Path) -> Result<(), EngineError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&encode_checkpoint(model))?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<ModelInstance, EngineError> {
    decode_checkpoint(&fs::read(path)?)
}
