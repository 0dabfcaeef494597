//! Hand-designed baseline classifiers, buildable as graphs for parameter
//! accounting and training. Layer widths not pinned down by the original
//! descriptions are configurable; the defaults are approximations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::graph::{GraphBuilder, LayerSpec, ModelGraph};

use super::SpaceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Reference {
    UWOrangeH,
    UCDavisCNN,
    DeepPacketCNN,
    E2ECNN,
}

impl Reference {
    pub const ALL: [Reference; 4] = [
        Reference::UWOrangeH,
        Reference::UCDavisCNN,
        Reference::DeepPacketCNN,
        Reference::E2ECNN,
    ];

    /// Input length the model was designed for.
    pub fn native_input_len(self) -> usize {
        match self {
            Reference::UWOrangeH | Reference::UCDavisCNN => 1800,
            Reference::DeepPacketCNN => 1500,
            Reference::E2ECNN => 768,
        }
    }

    /// Total parameter count published for the TLS service-level datasets.
    pub fn published_total_params(self) -> u64 {
        match self {
            Reference::UWOrangeH => 7_588_360,
            Reference::UCDavisCNN => 6_507_016,
            Reference::DeepPacketCNN => 9_960_732,
            Reference::E2ECNN => 11_202_440,
        }
    }

    pub fn default_config(self) -> ReferenceConfig {
        let conv = |kernel_size, filters, stride| ConvStage {
            kernel_size,
            filters,
            stride,
            pool: None,
        };
        let pooled = |kernel_size, filters, pool_size, pool_stride| ConvStage {
            kernel_size,
            filters,
            stride: 1,
            pool: Some((pool_size, pool_stride)),
        };
        match self {
            Reference::UWOrangeH => ReferenceConfig {
                conv: vec![conv(5, 32, 1), pooled(5, 32, 2, 2), conv(5, 64, 1), pooled(5, 64, 2, 2)],
                dense: vec![256, 128],
                dropout: Some(0.3),
            },
            Reference::UCDavisCNN => ReferenceConfig {
                conv: vec![conv(5, 32, 1), pooled(5, 32, 2, 2), conv(5, 64, 1), pooled(5, 64, 2, 2)],
                dense: vec![224, 64],
                dropout: None,
            },
            Reference::DeepPacketCNN => ReferenceConfig {
                conv: vec![conv(4, 200, 3), pooled(5, 200, 2, 2)],
                dense: vec![200, 100, 50],
                dropout: None,
            },
            Reference::E2ECNN => ReferenceConfig {
                conv: vec![pooled(25, 32, 3, 2), pooled(25, 64, 3, 2)],
                dense: vec![1024],
                dropout: None,
            },
        }
    }
}

impl fmt::Display for Reference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Reference {
    type Err = SpaceError;

    fn from_str(s: &str) -> Result<Self, SpaceError> {
        Reference::ALL
            .into_iter()
            .find(|r| r.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| SpaceError::UnknownReference(s.to_string()))
    }
}

/// Conv1D (+ ReLU) optionally followed by a max-pool of `(size, stride)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvStage {
    pub kernel_size: usize,
    pub filters: usize,
    pub stride: usize,
    pub pool: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConfig {
    pub conv: Vec<ConvStage>,
    /// Hidden dense widths; the classifier layer is appended.
    pub dense: Vec<usize>,
    /// Dropout after each hidden dense layer.
    pub dropout: Option<f64>,
}

impl ReferenceConfig {
    pub fn build(&self, input_len: usize, num_classes: usize) -> Result<ModelGraph, SpaceError> {
        let mut b = GraphBuilder::new();
        let mut h = b.add(
            LayerSpec::Input {
                length: input_len,
                channels: 1,
                reshape: None,
            },
            &[],
        );
        for stage in &self.conv {
            h = b.add(
                LayerSpec::Conv1D {
                    kernel_size: stage.kernel_size,
                    filters: stage.filters,
                    stride: stage.stride,
                },
                &[h],
            );
            h = b.add(LayerSpec::ReLU, &[h]);
            if let Some((pool_size, stride)) = stage.pool {
                h = b.add(LayerSpec::MaxPool1D { pool_size, stride }, &[h]);
            }
        }
        h = b.add(LayerSpec::Flatten, &[h]);
        for &units in &self.dense {
            h = b.chain(h, [LayerSpec::Dense { units }, LayerSpec::ReLU]);
            if let Some(rate) = self.dropout {
                h = b.add(LayerSpec::Dropout { rate }, &[h]);
            }
        }
        h = b.add(LayerSpec::Dense { units: num_classes }, &[h]);
        b.add(LayerSpec::Softmax, &[h]);
        Ok(b.finish(num_classes)?)
    }
}

pub fn build_reference(
    name: Reference,
    input_len: usize,
    num_classes: usize,
) -> Result<ModelGraph, SpaceError> {
    name.default_config().build(input_len, num_classes)
}
