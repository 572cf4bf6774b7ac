//! Parameter accounting.

use serde::Serialize;

use crate::error::Result;
use crate::model::{LayerSpec, ModelDescriptor};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerCount {
    pub layer: usize,
    pub learnable: u64,
    /// Parameters an ordinary layer of the same shape would store.
    pub effective: u64,
}

impl LayerCount {
    pub fn tau(&self) -> f64 {
        self.effective as f64 / self.learnable as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCount {
    pub learnable: u64,
    pub effective: u64,
    /// Effective over learnable convolution parameters.
    pub tau: f64,
    pub conv_layers: Vec<LayerCount>,
}

pub fn count_params(descriptor: &ModelDescriptor) -> Result<ParamCount> {
    descriptor.validate()?;
    let mut learnable = 0u64;
    let mut effective = 0u64;
    let mut conv_layers = Vec::new();
    for (i, layer) in descriptor.layers.iter().enumerate() {
        match layer {
            LayerSpec::MonoConv { geom, .. } => {
                let seed = geom.filter_len() as u64;
                conv_layers.push(LayerCount {
                    layer: i,
                    learnable: seed,
                    effective: seed * geom.out_channels as u64,
                });
            }
            LayerSpec::StdConv { geom } => {
                let full = (geom.filter_len() * geom.out_channels) as u64;
                conv_layers.push(LayerCount {
                    layer: i,
                    learnable: full,
                    effective: full,
                });
            }
            LayerSpec::Dense { input, output } => {
                let n = (input * output + output) as u64;
                learnable += n;
                effective += n;
            }
            _ => {}
        }
    }
    let conv_learnable: u64 = conv_layers.iter().map(|c| c.learnable).sum();
    let conv_effective: u64 = conv_layers.iter().map(|c| c.effective).sum();
    Ok(ParamCount {
        learnable: learnable + conv_learnable,
        effective: effective + conv_effective,
        tau: if conv_learnable == 0 {
            1.0
        } else {
            conv_effective as f64 / conv_learnable as f64
        },
        conv_layers,
    })
}

/// Saving ratio of a generated bank followed by a 1x1 combination layer,
/// against an ordinary bank with the same 1x1 layer:
/// `(C_in k^2 m + m C_out) / (C_in k^2 + m C_out)`.
pub fn pointwise_saving_ratio(c_in: u64, c_out: u64, kernel: u64, m: u64) -> f64 {
    let k2 = kernel * kernel;
    (c_in * k2 * m + m * c_out) as f64 / (c_in * k2 + m * c_out) as f64
}
