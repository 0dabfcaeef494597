//! Architecture graphs.
//!
//! A [`ModelGraph`] is a DAG of [`LayerSpec`] nodes with a single `Input`
//! source and a single `Softmax` sink. Everything that builds a network in
//! this crate (the cell search space, the CNN+MLP spaces, the reference
//! baselines) produces one, and the neural engine executes it.
//!
//! Tensors are channels-last: a 1D feature map is `[length, channels]`, a 2D
//! map is `[height, width, channels]` and a flat vector is `[units]`.

mod params;
mod serial;
mod shape;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub use params::ParamCount;
pub use serial::{SCHEMA_TAG, SerialError};
pub use shape::{Shape, ShapeMap};

pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// Byte-vector input. `reshape` lays the vector out row-major as a
    /// `[h, w, channels]` map, zero-padding the tail when `h * w > length`.
    Input {
        length: usize,
        channels: usize,
        reshape: Option<[usize; 2]>,
    },
    Conv1D {
        kernel_size: usize,
        filters: usize,
        stride: usize,
    },
    /// Square `kernel_size x kernel_size` convolution over a 2D map.
    Conv2D {
        kernel_size: usize,
        filters: usize,
        stride: usize,
    },
    /// Depthwise convolution (no bias) followed by a pointwise convolution
    /// with bias.
    SeparableConv1D {
        kernel_size: usize,
        filters: usize,
        stride: usize,
    },
    Dense {
        units: usize,
    },
    BatchNorm,
    Dropout {
        rate: f64,
    },
    ReLU,
    ELU,
    MaxPool1D {
        pool_size: usize,
        stride: usize,
    },
    AvgPool1D {
        pool_size: usize,
        stride: usize,
    },
    MaxPool2D {
        pool_size: usize,
        stride: usize,
    },
    AvgPool2D {
        pool_size: usize,
        stride: usize,
    },
    Add,
    Concat,
    Flatten,
    GlobalAvgPool,
    Softmax,
    Identity,
    /// Drops the first position along the length axis and zero-pads the end.
    Shift,
}

/// Attribute-free discriminant of a [`LayerSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerKind {
    Input,
    Conv1D,
    Conv2D,
    SeparableConv1D,
    Dense,
    BatchNorm,
    Dropout,
    ReLU,
    ELU,
    MaxPool1D,
    AvgPool1D,
    MaxPool2D,
    AvgPool2D,
    Add,
    Concat,
    Flatten,
    GlobalAvgPool,
    Softmax,
    Identity,
    Shift,
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Input { .. } => LayerKind::Input,
            LayerSpec::Conv1D { .. } => LayerKind::Conv1D,
            LayerSpec::Conv2D { .. } => LayerKind::Conv2D,
            LayerSpec::SeparableConv1D { .. } => LayerKind::SeparableConv1D,
            LayerSpec::Dense { .. } => LayerKind::Dense,
            LayerSpec::BatchNorm => LayerKind::BatchNorm,
            LayerSpec::Dropout { .. } => LayerKind::Dropout,
            LayerSpec::ReLU => LayerKind::ReLU,
            LayerSpec::ELU => LayerKind::ELU,
            LayerSpec::MaxPool1D { .. } => LayerKind::MaxPool1D,
            LayerSpec::AvgPool1D { .. } => LayerKind::AvgPool1D,
            LayerSpec::MaxPool2D { .. } => LayerKind::MaxPool2D,
            LayerSpec::AvgPool2D { .. } => LayerKind::AvgPool2D,
            LayerSpec::Add => LayerKind::Add,
            LayerSpec::Concat => LayerKind::Concat,
            LayerSpec::Flatten => LayerKind::Flatten,
            LayerSpec::GlobalAvgPool => LayerKind::GlobalAvgPool,
            LayerSpec::Softmax => LayerKind::Softmax,
            LayerSpec::Identity => LayerKind::Identity,
            LayerSpec::Shift => LayerKind::Shift,
        }
    }

    /// `(min, max)` number of in-edges the layer accepts.
    pub fn fan_in(&self) -> (usize, usize) {
        match self {
            LayerSpec::Input { .. } => (0, 0),
            LayerSpec::Add | LayerSpec::Concat => (2, usize::MAX),
            _ => (1, 1),
        }
    }

    fn check_attributes(&self) -> Result<(), String> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(format!("{name} must be positive"))
            } else {
                Ok(())
            }
        };
        match *self {
            LayerSpec::Input {
                length,
                channels,
                reshape,
            } => {
                positive("length", length)?;
                positive("channels", channels)?;
                if let Some([h, w]) = reshape {
                    positive("reshape height", h)?;
                    positive("reshape width", w)?;
                    if h * w < length {
                        return Err(format!("reshape {h}x{w} cannot hold {length} positions"));
                    }
                }
                Ok(())
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
            } => {
                positive("kernel_size", kernel_size)?;
                positive("filters", filters)?;
                positive("stride", stride)
            }
            LayerSpec::Dense { units } => positive("units", units),
            LayerSpec::Dropout { rate } => {
                if (0.0..1.0).contains(&rate) {
                    Ok(())
                } else {
                    Err(format!("dropout rate {rate} outside [0, 1)"))
                }
            }
            LayerSpec::MaxPool1D { pool_size, stride }
            | LayerSpec::AvgPool1D { pool_size, stride }
            | LayerSpec::MaxPool2D { pool_size, stride }
            | LayerSpec::AvgPool2D { pool_size, stride } => {
                positive("pool_size", pool_size)?;
                positive("stride", stride)
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub layer: LayerSpec,
}

/// A directed edge feeding `src`'s output into input `slot` of `dst`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub slot: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("edge {src} -> {dst} references a missing node")]
    DanglingEdge { src: NodeId, dst: NodeId },
    #[error("graph must contain exactly one Input node, found {0}")]
    InputCount(usize),
    #[error("graph must contain exactly one Softmax node, found {0}")]
    SoftmaxCount(usize),
    #[error("node {0} has no consumers but is not the Softmax sink")]
    ExtraSink(NodeId),
    #[error("node {node}: expected {min}..={max} inputs, found {found}")]
    FanIn {
        node: NodeId,
        min: usize,
        max: usize,
        found: usize,
    },
    #[error("node {node}: input slots must be 0..n without gaps")]
    SlotGap { node: NodeId },
    #[error("node {node}: {detail}")]
    BadAttribute { node: NodeId, detail: String },
    #[error("graph contains a cycle")]
    Cycle,
    #[error("node {0} is unreachable from the Input node")]
    UnreachableNode(NodeId),
    #[error("node {node}: shape mismatch: {detail}")]
    ShapeMismatch { node: NodeId, detail: String },
    #[error("softmax width {found} does not match num_classes {expected}")]
    ClassMismatch { expected: usize, found: usize },
}

/// Immutable, validated architecture graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    num_classes: usize,
    order: Vec<NodeId>,
    shapes: ShapeMap,
}

impl ModelGraph {
    /// Validates `nodes`/`edges` and builds the graph.
    pub fn from_parts(
        nodes: Vec<Node>,
        edges: Vec<Edge>,
        num_classes: usize,
    ) -> Result<Self, GraphError> {
        let order = validate_structure(&nodes, &edges)?;
        let shapes = shape::infer(&nodes, &edges, &order)?;
        let sink = nodes
            .iter()
            .find(|n| n.layer.kind() == LayerKind::Softmax)
            .expect("validated");
        let width = shapes[&sink.id].dims();
        if width.len() != 1 || width[0] != num_classes {
            return Err(GraphError::ClassMismatch {
                expected: num_classes,
                found: width.iter().product(),
            });
        }
        Ok(Self {
            nodes,
            edges,
            num_classes,
            order,
            shapes,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn input_node(&self) -> &Node {
        self.nodes
            .iter()
            .find(|n| n.layer.kind() == LayerKind::Input)
            .expect("validated")
    }

    pub fn output_node(&self) -> &Node {
        self.nodes
            .iter()
            .find(|n| n.layer.kind() == LayerKind::Softmax)
            .expect("validated")
    }

    /// Flat number of input values per sample (`length * channels`).
    pub fn input_len(&self) -> usize {
        match self.input_node().layer {
            LayerSpec::Input {
                length, channels, ..
            } => length * channels,
            _ => unreachable!(),
        }
    }

    /// Deterministic topological order (ready nodes taken by ascending id).
    pub fn topo_order(&self) -> &[NodeId] {
        &self.order
    }

    /// Input node ids of `id`, ordered by slot.
    pub fn inputs_of(&self, id: NodeId) -> Vec<NodeId> {
        let mut ins: Vec<&Edge> = self.edges.iter().filter(|e| e.dst == id).collect();
        ins.sort_by_key(|e| e.slot);
        ins.into_iter().map(|e| e.src).collect()
    }

    pub fn consumers_of(&self, id: NodeId) -> Vec<NodeId> {
        self.edges
            .iter()
            .filter(|e| e.src == id)
            .map(|e| e.dst)
            .collect()
    }

    /// Output shape of every node.
    pub fn shapes(&self) -> &ShapeMap {
        &self.shapes
    }

    /// Recomputes shapes from scratch.
    pub fn infer_shapes(&self) -> Result<ShapeMap, GraphError> {
        shape::infer(&self.nodes, &self.edges, &self.order)
    }

    pub fn count_params(&self) -> ParamCount {
        params::count(self)
    }

    pub fn count_kind(&self, kind: LayerKind) -> usize {
        self.nodes.iter().filter(|n| n.layer.kind() == kind).count()
    }

    /// Sum of channels normalised by BatchNorm nodes.
    pub fn batchnorm_channels(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.layer.kind() == LayerKind::BatchNorm)
            .map(|n| self.shapes[&n.id].channels())
            .sum()
    }

    pub fn to_text(&self) -> String {
        serial::to_text(self)
    }

    pub fn from_text(text: &str) -> Result<Self, SerialError> {
        serial::from_text(text)
    }
}

/// Incremental graph construction with sequential node ids.
#[derive(Debug, Default, Clone)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, layer: LayerSpec, inputs: &[NodeId]) -> NodeId {
        let id = self.nodes.len() as NodeId;
        self.nodes.push(Node { id, layer });
        for (slot, &src) in inputs.iter().enumerate() {
            self.edges.push(Edge {
                src,
                dst: id,
                slot: slot as u32,
            });
        }
        id
    }

    /// Appends a chain of single-input layers after `from`.
    pub fn chain(&mut self, from: NodeId, layers: impl IntoIterator<Item = LayerSpec>) -> NodeId {
        layers
            .into_iter()
            .fold(from, |prev, layer| self.add(layer, &[prev]))
    }

    pub fn finish(self, num_classes: usize) -> Result<ModelGraph, GraphError> {
        ModelGraph::from_parts(self.nodes, self.edges, num_classes)
    }
}

/// Checks ids, edges, fan-in, source/sink counts, acyclicity and
/// reachability. Returns the topological order.
fn validate_structure(nodes: &[Node], edges: &[Edge]) -> Result<Vec<NodeId>, GraphError> {
    let mut ids = BTreeSet::new();
    for n in nodes {
        if !ids.insert(n.id) {
            return Err(GraphError::DuplicateNode(n.id));
        }
        n.layer
            .check_attributes()
            .map_err(|detail| GraphError::BadAttribute { node: n.id, detail })?;
    }
    for e in edges {
        if !ids.contains(&e.src) || !ids.contains(&e.dst) {
            return Err(GraphError::DanglingEdge {
                src: e.src,
                dst: e.dst,
            });
        }
    }

    let inputs = nodes
        .iter()
        .filter(|n| n.layer.kind() == LayerKind::Input)
        .count();
    if inputs != 1 {
        return Err(GraphError::InputCount(inputs));
    }
    let softmaxes: Vec<NodeId> = nodes
        .iter()
        .filter(|n| n.layer.kind() == LayerKind::Softmax)
        .map(|n| n.id)
        .collect();
    if softmaxes.len() != 1 {
        return Err(GraphError::SoftmaxCount(softmaxes.len()));
    }

    let mut in_slots: BTreeMap<NodeId, Vec<u32>> = BTreeMap::new();
    let mut out_degree: BTreeMap<NodeId, usize> = BTreeMap::new();
    for e in edges {
        in_slots.entry(e.dst).or_default().push(e.slot);
        *out_degree.entry(e.src).or_default() += 1;
    }
    for n in nodes {
        let mut slots = in_slots.remove(&n.id).unwrap_or_default();
        let (min, max) = n.layer.fan_in();
        if slots.len() < min || slots.len() > max {
            return Err(GraphError::FanIn {
                node: n.id,
                min,
                max,
                found: slots.len(),
            });
        }
        slots.sort_unstable();
        if slots.iter().enumerate().any(|(i, &s)| s as usize != i) {
            return Err(GraphError::SlotGap { node: n.id });
        }
        let is_sink = out_degree.get(&n.id).copied().unwrap_or(0) == 0;
        let is_softmax = n.layer.kind() == LayerKind::Softmax;
        if is_sink && !is_softmax {
            return Err(GraphError::ExtraSink(n.id));
        }
        if is_softmax && !is_sink {
            return Err(GraphError::SoftmaxCount(2));
        }
    }

    let order = shape::topological_order(nodes, edges).ok_or(GraphError::Cycle)?;

    // Reachability: with exactly one zero-fan-in node (Input) and no cycles,
    // every node is reachable iff forward traversal from Input visits all.
    let input = nodes
        .iter()
        .find(|n| n.layer.kind() == LayerKind::Input)
        .map(|n| n.id)
        .expect("counted above");
    let mut seen = BTreeSet::from([input]);
    let mut stack = vec![input];
    while let Some(id) = stack.pop() {
        for e in edges.iter().filter(|e| e.src == id) {
            if seen.insert(e.dst) {
                stack.push(e.dst);
            }
        }
    }
    if let Some(n) = nodes.iter().find(|n| !seen.contains(&n.id)) {
        return Err(GraphError::UnreachableNode(n.id));
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn input(length: usize, channels: usize) -> LayerSpec {
        LayerSpec::Input {
            length,
            channels,
            reshape: None,
        }
    }

    #[test]
    fn minimal_graph_is_valid() {
        let mut b = GraphBuilder::new();
        let x = b.add(input(10, 1), &[]);
        let f = b.add(LayerSpec::Flatten, &[x]);
        let d = b.add(LayerSpec::Dense { units: 3 }, &[f]);
        b.add(LayerSpec::Softmax, &[d]);
        let g = b.finish(3).unwrap();
        assert_eq!(g.topo_order(), &[0, 1, 2, 3]);
        assert_eq!(g.input_len(), 10);
    }

    #[test]
    fn rejects_second_sink() {
        let mut b = GraphBuilder::new();
        let x = b.add(input(4, 1), &[]);
        let f = b.add(LayerSpec::Flatten, &[x]);
        b.add(LayerSpec::ReLU, &[f]);
        let d = b.add(LayerSpec::Dense { units: 2 }, &[f]);
        b.add(LayerSpec::Softmax, &[d]);
        assert_eq!(b.finish(2).unwrap_err(), GraphError::ExtraSink(2));
    }

    #[test]
    fn rejects_cycle() {
        let nodes = vec![
            Node {
                id: 0,
                layer: input(4, 1),
            },
            Node {
                id: 1,
                layer: LayerSpec::Add,
            },
            Node {
                id: 2,
                layer: LayerSpec::ReLU,
            },
            Node {
                id: 3,
                layer: LayerSpec::Flatten,
            },
            Node {
                id: 4,
                layer: LayerSpec::Dense { units: 2 },
            },
            Node {
                id: 5,
                layer: LayerSpec::Softmax,
            },
        ];
        let e = |src, dst, slot| Edge { src, dst, slot };
        let edges = vec![
            e(0, 1, 0),
            e(2, 1, 1),
            e(1, 2, 0),
            e(2, 3, 0),
            e(3, 4, 0),
            e(4, 5, 0),
        ];
        assert_eq!(
            ModelGraph::from_parts(nodes, edges, 2).unwrap_err(),
            GraphError::Cycle
        );
    }

    #[test]
    fn rejects_dropout_rate_one() {
        let mut b = GraphBuilder::new();
        let x = b.add(input(4, 1), &[]);
        let f = b.add(LayerSpec::Flatten, &[x]);
        let d = b.add(LayerSpec::Dropout { rate: 1.0 }, &[f]);
        let d = b.add(LayerSpec::Dense { units: 2 }, &[d]);
        b.add(LayerSpec::Softmax, &[d]);
        assert!(matches!(
            b.finish(2),
            Err(GraphError::BadAttribute { node: 2, .. })
        ));
    }

    #[test]
    fn softmax_width_must_match_classes() {
        let mut b = GraphBuilder::new();
        let x = b.add(input(4, 1), &[]);
        let f = b.add(LayerSpec::Flatten, &[x]);
        let d = b.add(LayerSpec::Dense { units: 2 }, &[f]);
        b.add(LayerSpec::Softmax, &[d]);
        assert!(matches!(
            b.finish(5),
            Err(GraphError::ClassMismatch { expected: 5, .. })
        ));
    }
}
