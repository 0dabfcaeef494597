use crate::graph::{GraphBuilder, LayerSpec, ModelGraph, NodeId};

use super::{CellKind, CellOp, DecisionSequence, SpaceConfig, SpaceError};

/// Node ids of one decoded cell node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeLayout {
    /// Output of each operation branch (`op1`, `op2`).
    pub branches: [NodeId; 2],
    /// The node's Add.
    pub output: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellLayout {
    pub kind: CellKind,
    /// Hyper-layer output feeding the cell.
    pub input: NodeId,
    pub nodes: Vec<NodeLayout>,
    /// Outputs of non-final nodes that no later node consumes.
    pub loose_ends: Vec<NodeId>,
}

impl CellLayout {
    pub fn terminal_add(&self) -> NodeId {
        self.nodes.last().expect("cells have at least one node").output
    }
}

#[derive(Debug, Clone)]
pub struct DecodedModel {
    pub graph: ModelGraph,
    pub cells: Vec<CellLayout>,
}

pub fn decode(seq: &DecisionSequence, space: &SpaceConfig) -> Result<ModelGraph, SpaceError> {
    decode_detailed(seq, space).map(|d| d.graph)
}

/// Builds Input -> [hyper-layer -> cell]* -> GlobalAvgPool -> Dense -> Softmax.
pub fn decode_detailed(
    seq: &DecisionSequence,
    space: &SpaceConfig,
) -> Result<DecodedModel, SpaceError> {
    space.validate()?;
    let cells = space.cell_specs(seq)?;
    let filters = space.initial_filters;
    let mut b = GraphBuilder::new();
    let mut h = b.add(
        LayerSpec::Input {
            length: space.input_length,
            channels: space.input_channels,
            reshape: None,
        },
        &[],
    );

    let mut layouts = Vec::with_capacity(cells.len());
    for cell in &cells {
        let cell_input = match cell.kind {
            CellKind::Normal => filter_alignment(&mut b, h, filters),
            CellKind::Reduction => factorized_reduction(&mut b, h, filters),
        };
        let layout = build_cell(&mut b, cell_input, cell.kind, &cell.decisions, space);
        h = layout.terminal_add();
        layouts.push(layout);
    }

    let pooled = b.add(LayerSpec::GlobalAvgPool, &[h]);
    let logits = b.add(
        LayerSpec::Dense {
            units: space.num_classes,
        },
        &[pooled],
    );
    b.add(LayerSpec::Softmax, &[logits]);
    let graph = b.finish(space.num_classes)?;
    Ok(DecodedModel {
        graph,
        cells: layouts,
    })
}

/// ReLU -> pointwise conv introducing `filters` channels -> BatchNorm.
fn filter_alignment(b: &mut GraphBuilder, from: NodeId, filters: usize) -> NodeId {
    b.chain(
        from,
        [
            LayerSpec::ReLU,
            LayerSpec::Conv1D {
                kernel_size: 1,
                filters,
                stride: 1,
            },
            LayerSpec::BatchNorm,
        ],
    )
}

/// Two stride-2 paths, the second offset by one position, each projected to
/// half the channels, concatenated and normalised. Halves the length.
fn factorized_reduction(b: &mut GraphBuilder, from: NodeId, filters: usize) -> NodeId {
    let half = filters / 2;
    let subsample = LayerSpec::AvgPool1D {
        pool_size: 1,
        stride: 2,
    };
    let project = |f| LayerSpec::Conv1D {
        kernel_size: 1,
        filters: f,
        stride: 1,
    };
    let a = b.chain(from, [subsample.clone(), project(half)]);
    let c = b.chain(from, [LayerSpec::Shift, subsample, project(filters - half)]);
    let cat = b.add(LayerSpec::Concat, &[a, c]);
    b.add(LayerSpec::BatchNorm, &[cat])
}

fn apply_op(
    b: &mut GraphBuilder,
    from: NodeId,
    op: CellOp,
    channels: usize,
    dropout: f64,
) -> NodeId {
    match op {
        CellOp::Identity => b.add(LayerSpec::Identity, &[from]),
        CellOp::AvgPool3 => b.add(
            LayerSpec::AvgPool1D {
                pool_size: 3,
                stride: 1,
            },
            &[from],
        ),
        CellOp::MaxPool3 => b.add(
            LayerSpec::MaxPool1D {
                pool_size: 3,
                stride: 1,
            },
            &[from],
        ),
        CellOp::SepConv3 | CellOp::SepConv5 => {
            let kernel_size = if op == CellOp::SepConv3 { 3 } else { 5 };
            let hyper = [
                LayerSpec::ReLU,
                LayerSpec::SeparableConv1D {
                    kernel_size,
                    filters: channels,
                    stride: 1,
                },
                LayerSpec::BatchNorm,
                LayerSpec::Dropout { rate: dropout },
            ];
            let first = b.chain(from, hyper.clone());
            b.chain(first, hyper)
        }
    }
}

fn build_cell(
    b: &mut GraphBuilder,
    input: NodeId,
    kind: CellKind,
    decisions: &[super::NodeDecision],
    space: &SpaceConfig,
) -> CellLayout {
    let channels = space.initial_filters;
    let rate = space.cell_dropout_rate;
    let last = decisions.len() - 1;

    // A node output is consumed if any later node picks it as an input.
    let mut consumed = vec![false; decisions.len()];
    for d in decisions {
        for idx in [d.input1, d.input2] {
            if idx > 0 {
                consumed[idx - 1] = true;
            }
        }
    }

    let mut candidates = vec![input];
    let mut nodes: Vec<NodeLayout> = Vec::with_capacity(decisions.len());
    let mut loose_ends = Vec::new();
    for (k, d) in decisions.iter().enumerate() {
        let b1 = apply_op(b, candidates[d.input1], space.op_set[d.op1], channels, rate);
        let b2 = apply_op(b, candidates[d.input2], space.op_set[d.op2], channels, rate);
        let mut ins = vec![b1, b2];
        if k == last {
            loose_ends = nodes
                .iter()
                .enumerate()
                .filter(|(j, _)| !consumed[*j])
                .map(|(_, n)| n.output)
                .collect();
            ins.extend(&loose_ends);
        }
        let output = b.add(LayerSpec::Add, &ins);
        candidates.push(output);
        nodes.push(NodeLayout {
            branches: [b1, b2],
            output,
        });
    }
    CellLayout {
        kind,
        input,
        nodes,
        loose_ends,
    }
}
