use std::ops::Add;

use serde::{Deserialize, Serialize};

use super::{LayerSpec, ModelGraph};

/// Parameter totals. Only BatchNorm moving mean/variance are non-trainable.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: u64,
    pub trainable: u64,
}

impl Add for ParamCount {
    type Output = ParamCount;

    fn add(self, rhs: Self) -> Self {
        ParamCount {
            total: self.total + rhs.total,
            trainable: self.trainable + rhs.trainable,
        }
    }
}

impl ParamCount {
    fn trainable_only(n: usize) -> Self {
        ParamCount {
            total: n as u64,
            trainable: n as u64,
        }
    }

    /// Parameters of a single layer given its input and output shapes.
    pub fn of_layer(layer: &LayerSpec, input_channels: usize, input_units: usize) -> Self {
        match *layer {
            LayerSpec::Conv1D {
                kernel_size,
                filters,
                ..
            } => Self::trainable_only(kernel_size * input_channels * filters + filters),
            LayerSpec::Conv2D {
                kernel_size,
                filters,
                ..
            } => Self::trainable_only(
                kernel_size * kernel_size * input_channels * filters + filters,
            ),
            LayerSpec::SeparableConv1D {
                kernel_size,
                filters,
                ..
            } => Self::trainable_only(
                kernel_size * input_channels + input_channels * filters + filters,
            ),
            LayerSpec::Dense { units } => Self::trainable_only(input_units * units + units),
            LayerSpec::BatchNorm => ParamCount {
                total: 4 * input_channels as u64,
                trainable: 2 * input_channels as u64,
            },
            _ => ParamCount::default(),
        }
    }
}

pub(super) fn count(graph: &ModelGraph) -> ParamCount {
    let shapes = graph.shapes();
    graph
        .nodes()
        .iter()
        .map(|n| {
            let input = graph.inputs_of(n.id).first().map(|src| &shapes[src]);
            let (channels, units) = input.map_or((0, 0), |s| (s.channels(), s.numel()));
            ParamCount::of_layer(&n.layer, channels, units)
        })
        .fold(ParamCount::default(), Add::add)
}
