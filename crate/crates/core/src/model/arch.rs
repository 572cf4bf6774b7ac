//! Reference architectures.
//!
//! `mono-tiny` has three stages of widths 16/32/64, each a generated-bank
//! convolution followed by ReLU; stages are separated by 2x2 max pooling
//! and the last one feeds global average pooling and a dense classifier.
//! `std-tiny` is the same network with ordinary convolutions and serves as
//! teacher and baseline.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;
use crate::fgf::{FgfConfig, FgfKind, DEFAULT_BETA_LOWER, DEFAULT_BETA_UPPER};
use crate::model::{LayerSpec, ModelDescriptor};
use crate::ops::ConvGeometry;
use crate::rng::derive_seed;

pub const STAGE_WIDTHS: [usize; 3] = [16, 32, 64];
pub const KERNEL: usize = 3;

/// FGF settings shared by every generated layer of a reference model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FgfTemplate {
    pub kind: FgfKind,
    pub beta_lower: f32,
    pub beta_upper: f32,
    pub terms: usize,
}

impl Default for FgfTemplate {
    fn default() -> Self {
        Self {
            kind: FgfKind::Monomial,
            beta_lower: DEFAULT_BETA_LOWER,
            beta_upper: DEFAULT_BETA_UPPER,
            terms: 1,
        }
    }
}

impl FgfTemplate {
    pub fn config(&self, seed: u64, m: usize) -> FgfConfig {
        FgfConfig::new(self.kind, self.beta_lower, self.beta_upper, seed, m).with_terms(self.terms)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    MonoTiny,
    StdTiny,
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "mono-tiny" => Ok(Arch::MonoTiny),
            "std-tiny" => Ok(Arch::StdTiny),
            _ => Err(Error::Config(format!("unknown architecture {s:?} (mono-tiny|std-tiny)"))),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::MonoTiny => "mono-tiny",
            Arch::StdTiny => "std-tiny",
        })
    }
}

impl Arch {
    pub fn descriptor(
        self,
        input_shape: [usize; 3],
        classes: usize,
        fgf: &FgfTemplate,
        fgf_seed: u64,
    ) -> ModelDescriptor {
        match self {
            Arch::MonoTiny => mono_tiny(input_shape, classes, fgf, fgf_seed),
            Arch::StdTiny => std_tiny(input_shape, classes),
        }
    }
}

fn tiny(input_shape: [usize; 3], classes: usize, mut conv: impl FnMut(usize, ConvGeometry) -> LayerSpec) -> ModelDescriptor {
    let mut layers = Vec::new();
    let mut boundaries = Vec::new();
    let mut channels = input_shape[0];
    for (stage, &width) in STAGE_WIDTHS.iter().enumerate() {
        let geom = ConvGeometry::same(channels, width, KERNEL);
        layers.push(conv(layers.len(), geom));
        layers.push(LayerSpec::Relu);
        boundaries.push(layers.len());
        layers.push(if stage + 1 < STAGE_WIDTHS.len() {
            LayerSpec::MaxPool2x2
        } else {
            LayerSpec::GlobalAvgPool
        });
        channels = width;
    }
    layers.push(LayerSpec::Dense {
        input: channels,
        output: classes,
    });
    ModelDescriptor {
        name: String::new(),
        input_shape,
        layers,
        stage_boundaries: boundaries,
    }
}

pub fn mono_tiny(input_shape: [usize; 3], classes: usize, fgf: &FgfTemplate, fgf_seed: u64) -> ModelDescriptor {
    let mut d = tiny(input_shape, classes, |index, geom| LayerSpec::MonoConv {
        geom,
        fgf: fgf.config(derive_seed(fgf_seed, index as u64), geom.out_channels),
    });
    d.name = Arch::MonoTiny.to_string();
    d
}

pub fn std_tiny(input_shape: [usize; 3], classes: usize) -> ModelDescriptor {
    let mut d = tiny(input_shape, classes, |_, geom| LayerSpec::StdConv { geom });
    d.name = Arch::StdTiny.to_string();
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_models_validate() {
        let m = mono_tiny([1, 28, 28], 10, &FgfTemplate::default(), 1);
        assert_eq!(m.validate().unwrap(), 10);
        assert_eq!(m.stage_boundaries.len(), 3);
        let s = std_tiny([3, 32, 32], 10);
        assert_eq!(s.validate().unwrap(), 10);
        assert_eq!(m.stage_shapes().unwrap(), std_tiny([1, 28, 28], 10).stage_shapes().unwrap());
        assert_eq!(m.standard_twin().layers, std_tiny([1, 28, 28], 10).layers);
    }
}
