use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::fgf::FgfConfig;
use crate::ops::ConvGeometry;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    /// Convolution whose `m = out_channels` filters are generated from a
    /// single learnable seed filter.
    MonoConv { geom: ConvGeometry, fgf: FgfConfig },
    StdConv { geom: ConvGeometry },
    Relu,
    MaxPool2x2,
    GlobalAvgPool,
    Dense { input: usize, output: usize },
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::MonoConv { .. } => "mono-conv",
            LayerSpec::StdConv { .. } => "std-conv",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool2x2 => "maxpool2x2",
            LayerSpec::GlobalAvgPool => "global-avg-pool",
            LayerSpec::Dense { .. } => "dense",
        }
    }

    /// Whether this layer reduces spatial resolution and may therefore close
    /// a stage.
    fn closes_stage(&self) -> bool {
        matches!(self, LayerSpec::MaxPool2x2 | LayerSpec::GlobalAvgPool)
    }
}

/// Architecture of a classifier. `stage_boundaries` lists the indices of
/// resolution-reducing layers; the feature map entering each of those
/// layers is the output of one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub name: String,
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub stage_boundaries: Vec<usize>,
}

impl ModelDescriptor {
    /// Per-sample activation shapes: entry 0 is the input, entry `i + 1` the
    /// output of layer `i`.
    pub fn activation_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.contains(&0) {
            return shape_err(format!("input shape {:?} has a zero dim", self.input_shape));
        }
        let mut shapes = vec![self.input_shape.to_vec()];
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = shapes.last().unwrap();
            let ctx = |msg: String| Error::Shape(format!("layer {i} ({}): {msg}", layer.kind_name()));
            let next = match layer {
                LayerSpec::MonoConv { geom, .. } | LayerSpec::StdConv { geom } => {
                    geom.validate()?;
                    if let LayerSpec::MonoConv { fgf, .. } = layer {
                        fgf.validate()?;
                        if fgf.m != geom.out_channels {
                            return Err(ctx(format!(
                                "generated filter count {} must equal out_channels {}",
                                fgf.m, geom.out_channels
                            )));
                        }
                    }
                    if cur.len() != 3 || cur[0] != geom.in_channels {
                        return Err(ctx(format!("expects {} input channels, got {cur:?}", geom.in_channels)));
                    }
                    vec![
                        geom.out_channels,
                        geom.output_extent(cur[1]).map_err(|e| ctx(e.to_string()))?,
                        geom.output_extent(cur[2]).map_err(|e| ctx(e.to_string()))?,
                    ]
                }
                LayerSpec::Relu => cur.clone(),
                LayerSpec::MaxPool2x2 => {
                    if cur.len() != 3 || cur[1] < 2 || cur[2] < 2 {
                        return Err(ctx(format!("needs [C,H>=2,W>=2], got {cur:?}")));
                    }
                    vec![cur[0], cur[1] / 2, cur[2] / 2]
                }
                LayerSpec::GlobalAvgPool => {
                    if cur.len() != 3 {
                        return Err(ctx(format!("needs [C,H,W], got {cur:?}")));
                    }
                    vec![cur[0]]
                }
                LayerSpec::Dense { input, output } => {
                    if cur.len() != 1 || cur[0] != *input || *output == 0 {
                        return Err(ctx(format!("expects [{input}], got {cur:?}")));
                    }
                    vec![*output]
                }
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Checks layer composition and stage boundaries; returns the number of
    /// output classes.
    pub fn validate(&self) -> Result<usize> {
        let shapes = self.activation_shapes()?;
        let last = shapes.last().unwrap();
        if last.len() != 1 {
            return shape_err(format!("model must end in a vector of logits, got {last:?}"));
        }
        for pair in self.stage_boundaries.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::Config("stage boundaries must be strictly increasing".into()));
            }
        }
        for &b in &self.stage_boundaries {
            match self.layers.get(b) {
                Some(l) if l.closes_stage() => {}
                _ => {
                    return Err(Error::Config(format!(
                        "stage boundary {b} is not a resolution-reducing layer"
                    )))
                }
            }
        }
        Ok(last[0])
    }

    pub fn classes(&self) -> Result<usize> {
        self.validate()
    }

    /// Per-sample shapes of the stage feature maps.
    pub fn stage_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let shapes = self.activation_shapes()?;
        Ok(self.stage_boundaries.iter().map(|&b| shapes[b].clone()).collect())
    }

    /// The same architecture with every generated bank replaced by an
    /// ordinary convolution of identical geometry.
    pub fn standard_twin(&self) -> ModelDescriptor {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                LayerSpec::MonoConv { geom, .. } => LayerSpec::StdConv { geom: *geom },
                other => other.clone(),
            })
            .collect();
        ModelDescriptor {
            name: self.name.clone(),
            input_shape: self.input_shape,
            layers,
            stage_boundaries: self.stage_boundaries.clone(),
        }
    }
}
