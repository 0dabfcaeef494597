use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

use super::{Edge, GraphError, LayerSpec, Node, NodeId};

/// Per-sample output shape of a node, channels last.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

pub type ShapeMap = BTreeMap<NodeId, Shape>;

impl Shape {
    pub fn new(dims: Vec<usize>) -> Self {
        Self(dims)
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn channels(&self) -> usize {
        *self.0.last().unwrap_or(&0)
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ")")
    }
}

/// Length after a strided window with implicit same-padding.
pub fn strided_len(len: usize, stride: usize) -> usize {
    len.div_ceil(stride)
}

/// Kahn's algorithm taking ready nodes by ascending id. `None` on a cycle.
pub(super) fn topological_order(nodes: &[Node], edges: &[Edge]) -> Option<Vec<NodeId>> {
    let mut indegree: BTreeMap<NodeId, usize> = nodes.iter().map(|n| (n.id, 0)).collect();
    let mut succ: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for e in edges {
        *indegree.get_mut(&e.dst)? += 1;
        succ.entry(e.src).or_default().push(e.dst);
    }
    let mut ready: BinaryHeap<Reverse<NodeId>> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&id, _)| Reverse(id))
        .collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(Reverse(id)) = ready.pop() {
        order.push(id);
        for &next in succ.get(&id).map(Vec::as_slice).unwrap_or(&[]) {
            let d = indegree.get_mut(&next)?;
            *d -= 1;
            if *d == 0 {
                ready.push(Reverse(next));
            }
        }
    }
    (order.len() == nodes.len()).then_some(order)
}

pub(super) fn infer(
    nodes: &[Node],
    edges: &[Edge],
    order: &[NodeId],
) -> Result<ShapeMap, GraphError> {
    let layers: BTreeMap<NodeId, &LayerSpec> = nodes.iter().map(|n| (n.id, &n.layer)).collect();
    let mut inputs: BTreeMap<NodeId, Vec<(u32, NodeId)>> = BTreeMap::new();
    for e in edges {
        inputs.entry(e.dst).or_default().push((e.slot, e.src));
    }
    let mut shapes = ShapeMap::new();
    for &id in order {
        let mut ins = inputs.remove(&id).unwrap_or_default();
        ins.sort_unstable();
        let in_shapes: Vec<&Shape> = ins
            .iter()
            .map(|(_, src)| shapes.get(src).ok_or(GraphError::UnreachableNode(*src)))
            .collect::<Result<_, _>>()?;
        let out = layer_output(id, layers[&id], &in_shapes)?;
        shapes.insert(id, out);
    }
    Ok(shapes)
}

fn layer_output(id: NodeId, layer: &LayerSpec, ins: &[&Shape]) -> Result<Shape, GraphError> {
    let mismatch = |detail: String| GraphError::ShapeMismatch { node: id, detail };
    let need_rank = |s: &Shape, rank: usize| {
        if s.rank() == rank {
            Ok(())
        } else {
            Err(mismatch(format!("expected rank {rank} input, found {s}")))
        }
    };
    let first = || ins.first().copied().ok_or_else(|| mismatch("missing input".into()));

    Ok(match *layer {
        LayerSpec::Input {
            length,
            channels,
            reshape,
        } => match reshape {
            Some([h, w]) => Shape(vec![h, w, channels]),
            None => Shape(vec![length, channels]),
        },
        LayerSpec::Conv1D {
            filters, stride, ..
        }
        | LayerSpec::SeparableConv1D {
            filters, stride, ..
        } => {
            let s = first()?;
            need_rank(s, 2)?;
            Shape(vec![strided_len(s.0[0], stride), filters])
        }
        LayerSpec::Conv2D {
            filters, stride, ..
        } => {
            let s = first()?;
            need_rank(s, 3)?;
            Shape(vec![
                strided_len(s.0[0], stride),
                strided_len(s.0[1], stride),
                filters,
            ])
        }
        LayerSpec::MaxPool1D { stride, .. } | LayerSpec::AvgPool1D { stride, .. } => {
            let s = first()?;
            need_rank(s, 2)?;
            Shape(vec![strided_len(s.0[0], stride), s.0[1]])
        }
        LayerSpec::MaxPool2D { stride, .. } | LayerSpec::AvgPool2D { stride, .. } => {
            let s = first()?;
            need_rank(s, 3)?;
            Shape(vec![
                strided_len(s.0[0], stride),
                strided_len(s.0[1], stride),
                s.0[2],
            ])
        }
        LayerSpec::Dense { units } => {
            let s = first()?;
            need_rank(s, 1)?;
            Shape(vec![units])
        }
        LayerSpec::Softmax => {
            let s = first()?;
            need_rank(s, 1)?;
            s.clone()
        }
        LayerSpec::Shift => {
            let s = first()?;
            need_rank(s, 2)?;
            s.clone()
        }
        LayerSpec::BatchNorm
        | LayerSpec::Dropout { .. }
        | LayerSpec::ReLU
        | LayerSpec::ELU
        | LayerSpec::Identity => first()?.clone(),
        LayerSpec::Flatten => Shape(vec![first()?.numel()]),
        LayerSpec::GlobalAvgPool => {
            let s = first()?;
            if s.rank() < 2 {
                return Err(mismatch(format!("global pooling needs a spatial input, found {s}")));
            }
            Shape(vec![s.channels()])
        }
        LayerSpec::Add => {
            let s = first()?;
            if let Some(other) = ins.iter().find(|o| **o != s) {
                return Err(mismatch(format!("Add inputs {s} and {other} differ")));
            }
            s.clone()
        }
        LayerSpec::Concat => {
            let s = first()?;
            let lead = &s.0[..s.rank().saturating_sub(1)];
            let mut channels = 0;
            for o in ins {
                if o.rank() != s.rank() || &o.0[..o.rank() - 1] != lead {
                    return Err(mismatch(format!("Concat inputs {s} and {o} differ")));
                }
                channels += o.channels();
            }
            let mut dims = lead.to_vec();
            dims.push(channels);
            Shape(dims)
        }
    })
}
