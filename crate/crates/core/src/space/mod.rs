//! Search spaces: positional decision sequences and their decoding into
//! [`ModelGraph`]s.
//!
//! The cell space ([`SpaceConfig`]) is the primary one. The CNN+MLP spaces
//! ([`CnnMlpSpace`]) and the fixed reference baselines ([`Reference`]) exist
//! for comparison.

mod cell;
mod cnn_mlp;
mod reference;

use num_bigint::BigUint;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, ModelGraph};

pub use cell::{CellLayout, DecodedModel, NodeLayout, decode, decode_detailed};
pub use cnn_mlp::{
    Activation, BlockLayer, CnnMlpParams, CnnMlpSpace, ConvDims, PoolKind, build_cnn_mlp,
};
pub use reference::{Reference, ReferenceConfig, build_reference};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpaceError {
    #[error("position {position} out of range for a sequence of length {len}")]
    IndexOutOfRange { position: usize, len: usize },
    #[error("sequence length {found} does not match the space ({expected})")]
    LengthMismatch { expected: usize, found: usize },
    #[error("position {position}: value {value} exceeds arity {arity}")]
    ArityViolation {
        position: usize,
        value: usize,
        arity: usize,
    },
    #[error("{field}: {detail}")]
    DomainViolation { field: &'static str, detail: String },
    #[error("unknown reference model {0:?}")]
    UnknownReference(String),
    #[error("invalid space configuration: {0}")]
    InvalidConfig(String),
    #[error("decoded graph is invalid: {0}")]
    Graph(#[from] GraphError),
}

/// Candidate operation applied to one input of a cell node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellOp {
    Identity,
    SepConv3,
    SepConv5,
    AvgPool3,
    MaxPool3,
}

impl CellOp {
    pub const ALL: [CellOp; 5] = [
        CellOp::Identity,
        CellOp::SepConv3,
        CellOp::SepConv5,
        CellOp::AvgPool3,
        CellOp::MaxPool3,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    Normal,
    Reduction,
}

/// Configuration of the cell search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpaceConfig {
    pub nodes_per_cell: usize,
    pub op_set: Vec<CellOp>,
    pub initial_filters: usize,
    pub cell_dropout_rate: f64,
    pub input_length: usize,
    pub input_channels: usize,
    pub num_classes: usize,
    /// Cell chain; a Normal cell is preceded by a filter-alignment layer and
    /// a Reduction cell by a factorized-reduction layer.
    pub cells: Vec<CellKind>,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        Self {
            nodes_per_cell: 4,
            op_set: CellOp::ALL.to_vec(),
            initial_filters: 64,
            cell_dropout_rate: 0.4,
            input_length: 1800,
            input_channels: 1,
            num_classes: 2,
            cells: vec![CellKind::Normal, CellKind::Reduction],
        }
    }
}

/// Role of a position inside a node's four decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Input1,
    Op1,
    Input2,
    Op2,
}

/// Decisions for one node: indices into `{cell input, prior nodes}` and into
/// the op set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeDecision {
    pub input1: usize,
    pub op1: usize,
    pub input2: usize,
    pub op2: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellSpec {
    pub kind: CellKind,
    pub decisions: Vec<NodeDecision>,
}

pub const DECISIONS_PER_NODE: usize = 4;

impl SpaceConfig {
    pub fn validate(&self) -> Result<(), SpaceError> {
        let bad = |m: &str| Err(SpaceError::InvalidConfig(m.to_string()));
        if self.nodes_per_cell == 0 {
            return bad("nodes_per_cell must be at least 1");
        }
        if self.op_set.is_empty() {
            return bad("op_set must not be empty");
        }
        if self.cells.is_empty() {
            return bad("at least one cell is required");
        }
        if self.initial_filters < 2 {
            return bad("initial_filters must be at least 2");
        }
        if self.input_length == 0 || self.input_channels == 0 {
            return bad("input dimensions must be positive");
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2");
        }
        if !(0.0..1.0).contains(&self.cell_dropout_rate) {
            return bad("cell_dropout_rate must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn sequence_len(&self) -> usize {
        self.cells.len() * self.nodes_per_cell * DECISIONS_PER_NODE
    }

    /// `(cell, node, slot)` addressed by a flat position.
    pub fn locate(&self, position: usize) -> Result<(usize, usize, Slot), SpaceError> {
        let len = self.sequence_len();
        if position >= len {
            return Err(SpaceError::IndexOutOfRange { position, len });
        }
        let per_cell = self.nodes_per_cell * DECISIONS_PER_NODE;
        let cell = position / per_cell;
        let within = position % per_cell;
        let slot = match within % DECISIONS_PER_NODE {
            0 => Slot::Input1,
            1 => Slot::Op1,
            2 => Slot::Input2,
            _ => Slot::Op2,
        };
        Ok((cell, within / DECISIONS_PER_NODE, slot))
    }

    /// Number of choices at `position`: node `k` (0-based) picks its inputs
    /// among the cell input and `k` prior node outputs.
    pub fn decision_arity(&self, position: usize) -> Result<usize, SpaceError> {
        let (_, node, slot) = self.locate(position)?;
        Ok(match slot {
            Slot::Input1 | Slot::Input2 => node + 1,
            Slot::Op1 | Slot::Op2 => self.op_set.len(),
        })
    }

    pub fn arities(&self) -> Vec<usize> {
        (0..self.sequence_len())
            .map(|p| self.decision_arity(p).expect("in range"))
            .collect()
    }

    /// Cardinality of the space: product over cells and nodes of
    /// `(k + 1)^2 * |ops|^2`.
    pub fn space_size(&self) -> BigUint {
        let ops = BigUint::from(self.op_set.len());
        let mut total = BigUint::from(1u32);
        for _ in &self.cells {
            for k in 0..self.nodes_per_cell {
                let inputs = BigUint::from(k + 1);
                total *= &inputs * &inputs * &ops * &ops;
            }
        }
        total
    }

    pub fn sample_random(&self, seed: u64) -> DecisionSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_uniform(&self.arities(), &mut rng)
    }

    pub fn check(&self, seq: &DecisionSequence) -> Result<(), SpaceError> {
        check_against(&self.arities(), seq)
    }

    pub fn cell_specs(&self, seq: &DecisionSequence) -> Result<Vec<CellSpec>, SpaceError> {
        self.check(seq)?;
        let per_cell = self.nodes_per_cell * DECISIONS_PER_NODE;
        Ok(self
            .cells
            .iter()
            .zip(seq.0.chunks(per_cell))
            .map(|(&kind, chunk)| CellSpec {
                kind,
                decisions: chunk
                    .chunks(DECISIONS_PER_NODE)
                    .map(|d| NodeDecision {
                        input1: d[0],
                        op1: d[1],
                        input2: d[2],
                        op2: d[3],
                    })
                    .collect(),
            })
            .collect())
    }
}

/// Flat, positionally typed list of choices describing one architecture.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DecisionSequence(pub Vec<usize>);

impl DecisionSequence {
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::fmt::Display for DecisionSequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join("-"))
    }
}

pub fn sample_uniform<R: Rng + ?Sized>(arities: &[usize], rng: &mut R) -> DecisionSequence {
    DecisionSequence(arities.iter().map(|&a| rng.gen_range(0..a)).collect())
}

fn check_against(arities: &[usize], seq: &DecisionSequence) -> Result<(), SpaceError> {
    if seq.len() != arities.len() {
        return Err(SpaceError::LengthMismatch {
            expected: arities.len(),
            found: seq.len(),
        });
    }
    for (position, (&value, &arity)) in seq.0.iter().zip(arities).enumerate() {
        if value >= arity {
            return Err(SpaceError::ArityViolation {
                position,
                value,
                arity,
            });
        }
    }
    Ok(())
}

/// Any space the search strategies can walk: a fixed-length sequence of
/// categorical decisions that decodes into a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SearchSpace {
    Cell(SpaceConfig),
    CnnMlp(CnnMlpSpace),
}

impl SearchSpace {
    pub fn name(&self) -> &'static str {
        match self {
            SearchSpace::Cell(_) => "cell",
            SearchSpace::CnnMlp(s) => match s.dims {
                ConvDims::OneD => "cnn1d-mlp",
                ConvDims::TwoD => "cnn2d-mlp",
            },
        }
    }

    pub fn validate(&self) -> Result<(), SpaceError> {
        match self {
            SearchSpace::Cell(c) => c.validate(),
            SearchSpace::CnnMlp(s) => s.validate(),
        }
    }

    pub fn arities(&self) -> Vec<usize> {
        match self {
            SearchSpace::Cell(c) => c.arities(),
            SearchSpace::CnnMlp(_) => CnnMlpSpace::arities(),
        }
    }

    pub fn sequence_len(&self) -> usize {
        self.arities().len()
    }

    pub fn size(&self) -> BigUint {
        match self {
            SearchSpace::Cell(c) => c.space_size(),
            SearchSpace::CnnMlp(_) => CnnMlpSpace::arities()
                .into_iter()
                .map(BigUint::from)
                .product(),
        }
    }

    pub fn check(&self, seq: &DecisionSequence) -> Result<(), SpaceError> {
        check_against(&self.arities(), seq)
    }

    pub fn decode(&self, seq: &DecisionSequence) -> Result<ModelGraph, SpaceError> {
        match self {
            SearchSpace::Cell(c) => decode(seq, c),
            SearchSpace::CnnMlp(s) => s.decode(seq),
        }
    }

    pub fn input_len(&self) -> usize {
        match self {
            SearchSpace::Cell(c) => c.input_length * c.input_channels,
            SearchSpace::CnnMlp(s) => s.input_length * s.input_channels,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            SearchSpace::Cell(c) => c.num_classes,
            SearchSpace::CnnMlp(s) => s.num_classes,
        }
    }
}
