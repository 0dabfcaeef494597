//! Baseline CNN + MLP search spaces.
//!
//! A stack of CONV-Pool blocks (each a repeated CONV block followed by a
//! pooling layer) feeds an MLP of dense blocks. Each CONV block and dense
//! block is a weight layer followed by a permutation of dropout, activation
//! and (optional) batch normalisation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{GraphBuilder, LayerSpec, ModelGraph, NodeId};

use super::{DecisionSequence, SpaceError, check_against};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvDims {
    #[serde(rename = "1d")]
    OneD,
    #[serde(rename = "2d")]
    TwoD,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockLayer {
    Dropout,
    Activation,
    BatchNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Elu,
}

impl Activation {
    fn layer(self) -> LayerSpec {
        match self {
            Activation::Relu => LayerSpec::ReLU,
            Activation::Elu => LayerSpec::ELU,
        }
    }
}

const PERMUTATIONS: [[BlockLayer; 3]; 6] = {
    use BlockLayer::*;
    [
        [Dropout, Activation, BatchNorm],
        [Dropout, BatchNorm, Activation],
        [Activation, Dropout, BatchNorm],
        [Activation, BatchNorm, Dropout],
        [BatchNorm, Dropout, Activation],
        [BatchNorm, Activation, Dropout],
    ]
};

pub const CONV_POOL_BLOCKS: [usize; 5] = [1, 2, 3, 4, 5];
pub const CONV_BLOCK_REPEAT: [usize; 5] = [2, 3, 4, 5, 6];
pub const KERNELS: [usize; 2] = [1, 2];
pub const FILTERS: [usize; 2] = [32, 64];
pub const DENSE_UNITS: [usize; 3] = [100, 200, 400];
pub const DENSE_LAYERS: [usize; 3] = [3, 4, 5];
pub const REDUCE_FACTORS: [f64; 2] = [1.0, 0.7];
/// Grid used when the real-valued dropout rates are encoded as decisions.
pub const CONV_DROPOUT_GRID: [f64; 4] = [0.01, 0.02, 0.03, 0.04];
pub const MLP_DROPOUT_GRID: [f64; 3] = [0.35, 0.4, 0.45];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnMlpParams {
    /// Number of CONV-Pool blocks.
    pub conv_pool_blocks: usize,
    /// CONV block repetitions inside the third and later CONV-Pool blocks.
    pub conv_block_repeat: usize,
    pub kernel: usize,
    pub filters: usize,
    pub conv_dropout: f64,
    pub conv_order: [BlockLayer; 3],
    pub pooling: PoolKind,
    pub activation: Activation,
    pub batchnorm: bool,
    pub dense_units: usize,
    pub dense_layers: usize,
    pub reduce_factor: f64,
    pub mlp_activation: Activation,
    pub mlp_batchnorm: bool,
    pub mlp_dropout: f64,
    pub mlp_order: [BlockLayer; 3],
}

fn is_permutation(order: &[BlockLayer; 3]) -> bool {
    PERMUTATIONS.contains(order)
}

impl CnnMlpParams {
    pub fn validate(&self) -> Result<(), SpaceError> {
        fn domain<T: PartialEq + std::fmt::Debug>(
            field: &'static str,
            value: T,
            allowed: &[T],
        ) -> Result<(), SpaceError> {
            if allowed.contains(&value) {
                Ok(())
            } else {
                Err(SpaceError::DomainViolation {
                    field,
                    detail: format!("{value:?} not in {allowed:?}"),
                })
            }
        }
        fn open(field: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), SpaceError> {
            if value > lo && value < hi {
                Ok(())
            } else {
                Err(SpaceError::DomainViolation {
                    field,
                    detail: format!("{value} not in ({lo}, {hi})"),
                })
            }
        }
        if self.conv_pool_blocks == 0 {
            return Err(SpaceError::DomainViolation {
                field: "conv_pool_blocks",
                detail: "must be at least 1".into(),
            });
        }
        domain("conv_block_repeat", self.conv_block_repeat, &CONV_BLOCK_REPEAT)?;
        domain("kernel", self.kernel, &KERNELS)?;
        domain("filters", self.filters, &FILTERS)?;
        open("conv_dropout", self.conv_dropout, 0.0, 0.05)?;
        domain("dense_units", self.dense_units, &DENSE_UNITS)?;
        domain("dense_layers", self.dense_layers, &DENSE_LAYERS)?;
        domain("reduce_factor", self.reduce_factor, &REDUCE_FACTORS)?;
        open("mlp_dropout", self.mlp_dropout, 0.3, 0.5)?;
        for (field, order) in [("conv_order", &self.conv_order), ("mlp_order", &self.mlp_order)] {
            if !is_permutation(order) {
                return Err(SpaceError::DomainViolation {
                    field,
                    detail: format!("{order:?} is not a permutation"),
                });
            }
        }
        Ok(())
    }

    /// Filters used by each CONV-Pool block: the configured count for the
    /// first two blocks, halved for every block after that.
    pub fn block_filters(&self) -> Vec<usize> {
        (0..self.conv_pool_blocks)
            .map(|b| {
                if b < 2 {
                    self.filters
                } else {
                    (self.filters >> (b - 1)).max(1)
                }
            })
            .collect()
    }

    /// CONV block repetitions per CONV-Pool block.
    pub fn block_repeats(&self) -> Vec<usize> {
        (0..self.conv_pool_blocks)
            .map(|b| if b < 2 { 2 } else { self.conv_block_repeat })
            .collect()
    }

    /// Dense widths, shrinking by `floor(units * reduce_factor)` per block.
    pub fn dense_widths(&self) -> Vec<usize> {
        let mut widths = Vec::with_capacity(self.dense_layers);
        let mut units = self.dense_units;
        for _ in 0..self.dense_layers {
            widths.push(units);
            units = ((units as f64 * self.reduce_factor).floor() as usize).max(1);
        }
        widths
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let seq = super::sample_uniform(&CnnMlpSpace::arities(), rng);
        let mut p = CnnMlpSpace::params_from(&seq);
        p.conv_dropout = rng.gen_range(0.001..0.049);
        p.mlp_dropout = rng.gen_range(0.301..0.499);
        p
    }
}

/// Side length of the zero-padded square-ish map holding `len` bytes.
pub fn square_layout(len: usize) -> [usize; 2] {
    let h = (len as f64).sqrt().ceil() as usize;
    let h = h.max(1);
    [h, len.div_ceil(h)]
}

fn push_block_layers(
    b: &mut GraphBuilder,
    mut h: NodeId,
    order: &[BlockLayer; 3],
    dropout: f64,
    activation: Activation,
    batchnorm: bool,
) -> NodeId {
    for layer in order {
        h = match layer {
            BlockLayer::Dropout => b.add(LayerSpec::Dropout { rate: dropout }, &[h]),
            BlockLayer::Activation => b.add(activation.layer(), &[h]),
            BlockLayer::BatchNorm if batchnorm => b.add(LayerSpec::BatchNorm, &[h]),
            BlockLayer::BatchNorm => h,
        };
    }
    h
}

pub fn build_cnn_mlp(
    params: &CnnMlpParams,
    dims: ConvDims,
    input_length: usize,
    input_channels: usize,
    num_classes: usize,
) -> Result<ModelGraph, SpaceError> {
    params.validate()?;
    let mut b = GraphBuilder::new();
    let reshape = match dims {
        ConvDims::OneD => None,
        ConvDims::TwoD => Some(square_layout(input_length)),
    };
    let mut h = b.add(
        LayerSpec::Input {
            length: input_length,
            channels: input_channels,
            reshape,
        },
        &[],
    );
    for (filters, repeat) in params.block_filters().into_iter().zip(params.block_repeats()) {
        for _ in 0..repeat {
            let conv = match dims {
                ConvDims::OneD => LayerSpec::Conv1D {
                    kernel_size: params.kernel,
                    filters,
                    stride: 1,
                },
                ConvDims::TwoD => LayerSpec::Conv2D {
                    kernel_size: params.kernel,
                    filters,
                    stride: 1,
                },
            };
            h = b.add(conv, &[h]);
            h = push_block_layers(
                &mut b,
                h,
                &params.conv_order,
                params.conv_dropout,
                params.activation,
                params.batchnorm,
            );
        }
        let pool = match (dims, params.pooling) {
            (ConvDims::OneD, PoolKind::Max) => LayerSpec::MaxPool1D {
                pool_size: 2,
                stride: 2,
            },
            (ConvDims::OneD, PoolKind::Avg) => LayerSpec::AvgPool1D {
                pool_size: 2,
                stride: 2,
            },
            (ConvDims::TwoD, PoolKind::Max) => LayerSpec::MaxPool2D {
                pool_size: 2,
                stride: 2,
            },
            (ConvDims::TwoD, PoolKind::Avg) => LayerSpec::AvgPool2D {
                pool_size: 2,
                stride: 2,
            },
        };
        h = b.add(pool, &[h]);
    }
    h = b.add(LayerSpec::Flatten, &[h]);
    for units in params.dense_widths() {
        h = b.add(LayerSpec::Dense { units }, &[h]);
        h = push_block_layers(
            &mut b,
            h,
            &params.mlp_order,
            params.mlp_dropout,
            params.mlp_activation,
            params.mlp_batchnorm,
        );
    }
    h = b.add(LayerSpec::Dense { units: num_classes }, &[h]);
    b.add(LayerSpec::Softmax, &[h]);
    Ok(b.finish(num_classes)?)
}

/// The CNN+MLP space as a fixed-length categorical decision sequence, so the
/// same search strategies can walk it. Real-valued dropout rates are encoded
/// on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnMlpSpace {
    pub dims: ConvDims,
    pub input_length: usize,
    #[serde(default = "one")]
    pub input_channels: usize,
    pub num_classes: usize,
}

fn one() -> usize {
    1
}

impl CnnMlpSpace {
    pub fn validate(&self) -> Result<(), SpaceError> {
        if self.input_length == 0 || self.input_channels == 0 || self.num_classes < 2 {
            return Err(SpaceError::InvalidConfig(
                "input dimensions must be positive and num_classes at least 2".into(),
            ));
        }
        Ok(())
    }

    pub fn arities() -> Vec<usize> {
        vec![
            CONV_POOL_BLOCKS.len(),
            CONV_BLOCK_REPEAT.len(),
            KERNELS.len(),
            FILTERS.len(),
            CONV_DROPOUT_GRID.len(),
            PERMUTATIONS.len(),
            2, // pooling
            2, // activation
            2, // batchnorm
            DENSE_UNITS.len(),
            DENSE_LAYERS.len(),
            REDUCE_FACTORS.len(),
            2, // mlp activation
            2, // mlp batchnorm
            MLP_DROPOUT_GRID.len(),
            PERMUTATIONS.len(),
        ]
    }

    fn params_from(seq: &DecisionSequence) -> CnnMlpParams {
        let s = &seq.0;
        let act = |v| if v == 0 { Activation::Relu } else { Activation::Elu };
        CnnMlpParams {
            conv_pool_blocks: CONV_POOL_BLOCKS[s[0]],
            conv_block_repeat: CONV_BLOCK_REPEAT[s[1]],
            kernel: KERNELS[s[2]],
            filters: FILTERS[s[3]],
            conv_dropout: CONV_DROPOUT_GRID[s[4]],
            conv_order: PERMUTATIONS[s[5]],
            pooling: if s[6] == 0 { PoolKind::Max } else { PoolKind::Avg },
            activation: act(s[7]),
            batchnorm: s[8] == 1,
            dense_units: DENSE_UNITS[s[9]],
            dense_layers: DENSE_LAYERS[s[10]],
            reduce_factor: REDUCE_FACTORS[s[11]],
            mlp_activation: act(s[12]),
            mlp_batchnorm: s[13] == 1,
            mlp_dropout: MLP_DROPOUT_GRID[s[14]],
            mlp_order: PERMUTATIONS[s[15]],
        }
    }

    pub fn params(&self, seq: &DecisionSequence) -> Result<CnnMlpParams, SpaceError> {
        check_against(&Self::arities(), seq)?;
        Ok(Self::params_from(seq))
    }

    pub fn decode(&self, seq: &DecisionSequence) -> Result<ModelGraph, SpaceError> {
        let params = self.params(seq)?;
        build_cnn_mlp(
            &params,
            self.dims,
            self.input_length,
            self.input_channels,
            self.num_classes,
        )
    }
}
