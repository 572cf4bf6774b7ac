use serde::{Deserialize, Serialize};

use crate::bank::{backward_with, expand_bank, FilterBank};
use crate::error::{shape_err, Result};
use crate::fgf::{fgf_derivative, FgfKind};
use crate::model::{LayerSpec, ModelDescriptor};
use crate::ops::{
    avgpool_global, avgpool_global_backward, conv2d_backward, conv2d_forward, dense_backward,
    dense_forward, maxpool2x2, maxpool2x2_backward, relu, relu_backward,
};
use crate::rng::{derive_seed, Xoshiro256StarStar};
use crate::tensor::{Real, Tensor};

/// Parameters of one layer. Generated-bank layers keep the seed filter
/// inside their cached [`FilterBank`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerParams<T = f32> {
    None,
    Mono(FilterBank<T>),
    Conv(Tensor<T>),
    Dense { weights: Tensor<T>, bias: Tensor<T> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState<T = f32> {
    pub descriptor: ModelDescriptor,
    pub layers: Vec<LayerParams<T>>,
}

/// Activations recorded by a forward pass, consumed by [`ModelState::backward`].
pub struct Trace<T> {
    inputs: Vec<Tensor<T>>,
    argmax: Vec<Option<Vec<usize>>>,
    pub logits: Tensor<T>,
}

impl<T: Real> Trace<T> {
    /// Feature maps entering each stage boundary layer.
    pub fn stage_features(&self, boundaries: &[usize]) -> Vec<Tensor<T>> {
        boundaries.iter().map(|&b| self.inputs[b].clone()).collect()
    }

}

/// He-normal initialization, deterministic in `init_seed`. Each layer
/// draws from its own stream, and the final classifier starts at zero.
pub fn build(descriptor: &ModelDescriptor, init_seed: u64) -> Result<ModelState<f32>> {
    descriptor.validate()?;
    let last = descriptor.layers.len() - 1;
    let mut layers = Vec::with_capacity(descriptor.layers.len());
    for (i, spec) in descriptor.layers.iter().enumerate() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(derive_seed(init_seed, i as u64));
        let mut he = |shape: &[usize], fan_in: usize| {
            let std = (2.0 / fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            Tensor::from_vec(shape, (0..n).map(|_| (rng.normal() * std) as f32).collect())
        };
        let params = match spec {
            LayerSpec::MonoConv { geom, fgf } => {
                let seed = he(&[geom.in_channels, geom.kernel, geom.kernel], geom.filter_len())?;
                LayerParams::Mono(expand_bank(&seed, fgf)?)
            }
            LayerSpec::StdConv { geom } => LayerParams::Conv(he(&geom.weight_shape(), geom.filter_len())?),
            LayerSpec::Dense { input, output } => LayerParams::Dense {
                weights: if i == last {
                    Tensor::zeros(&[*output, *input])
                } else {
                    he(&[*output, *input], *input)?
                },
                bias: Tensor::zeros(&[*output]),
            },
            _ => LayerParams::None,
        };
        layers.push(params);
    }
    Ok(ModelState {
        descriptor: descriptor.clone(),
        layers,
    })
}

impl ModelState<f32> {
    /// He-initialize the weights of the final dense layer, which [`build`]
    /// leaves at zero. Useful when gradients must reach every layer from
    /// the first step, as in gradient checking.
    pub fn init_head(&mut self, seed: u64) {
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        if let Some(LayerParams::Dense { weights, .. }) = self.layers.last_mut() {
            let std = (2.0 / weights.dim(1) as f64).sqrt();
            for w in weights.data_mut() {
                *w = (rng.normal() * std) as f32;
            }
        }
    }
}

impl<T: Real> ModelState<T> {
    /// Assemble a state from explicit parameters, checking them against the
    /// descriptor.
    pub fn from_parts(descriptor: ModelDescriptor, layers: Vec<LayerParams<T>>) -> Result<Self> {
        descriptor.validate()?;
        if layers.len() != descriptor.layers.len() {
            return shape_err("parameter list length differs from layer count");
        }
        for (i, (spec, p)) in descriptor.layers.iter().zip(&layers).enumerate() {
            let ok = match (spec, p) {
                (LayerSpec::MonoConv { geom, fgf }, LayerParams::Mono(bank)) => {
                    bank.config == *fgf
                        && bank.seed_filter.shape() == [geom.in_channels, geom.kernel, geom.kernel]
                        && bank.generated.shape() == geom.weight_shape()
                }
                (LayerSpec::StdConv { geom }, LayerParams::Conv(w)) => w.shape() == geom.weight_shape(),
                (LayerSpec::Dense { input, output }, LayerParams::Dense { weights, bias }) => {
                    weights.shape() == [*output, *input] && bias.shape() == [*output]
                }
                (LayerSpec::Relu | LayerSpec::MaxPool2x2 | LayerSpec::GlobalAvgPool, LayerParams::None) => true,
                _ => false,
            };
            if !ok {
                return shape_err(format!("parameters of layer {i} do not match its spec"));
            }
        }
        Ok(Self { descriptor, layers })
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let s = input.shape();
        if s.len() != 4 || s[1..] != self.descriptor.input_shape {
            return shape_err(format!(
                "input {s:?} does not match model input [N, {:?}]",
                self.descriptor.input_shape
            ));
        }
        Ok(())
    }

    /// Logits `[N, classes]`, plus the stage feature maps when requested.
    pub fn forward(&self, input: &Tensor<T>, capture_stages: bool) -> Result<(Tensor<T>, Option<Vec<Tensor<T>>>)> {
        self.check_input(input)?;
        let mut x = input.clone();
        let mut stages = capture_stages.then(Vec::new);
        for (i, (spec, params)) in self.descriptor.layers.iter().zip(&self.layers).enumerate() {
            if let Some(st) = stages.as_mut() {
                if self.descriptor.stage_boundaries.contains(&i) {
                    st.push(x.clone());
                }
            }
            x = self.layer_forward(spec, params, &x)?.0;
        }
        Ok((x, stages))
    }

    fn layer_forward(
        &self,
        spec: &LayerSpec,
        params: &LayerParams<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, Option<Vec<usize>>)> {
        Ok(match (spec, params) {
            (LayerSpec::MonoConv { geom, .. }, LayerParams::Mono(bank)) => {
                (conv2d_forward(x, &bank.generated, geom)?, None)
            }
            (LayerSpec::StdConv { geom }, LayerParams::Conv(w)) => (conv2d_forward(x, w, geom)?, None),
            (LayerSpec::Relu, _) => (relu(x), None),
            (LayerSpec::MaxPool2x2, _) => {
                let (y, arg) = maxpool2x2(x)?;
                (y, Some(arg))
            }
            (LayerSpec::GlobalAvgPool, _) => (avgpool_global(x)?, None),
            (LayerSpec::Dense { .. }, LayerParams::Dense { weights, bias }) => {
                (dense_forward(x, weights, bias)?, None)
            }
            _ => return shape_err("layer parameters do not match spec"),
        })
    }

    /// Forward pass that keeps what the backward pass needs.
    pub fn forward_trace(&self, input: &Tensor<T>) -> Result<Trace<T>> {
        self.check_input(input)?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut argmax = Vec::with_capacity(n);
        let mut x = input.clone();
        for (spec, params) in self.descriptor.layers.iter().zip(&self.layers) {
            let (y, arg) = self.layer_forward(spec, params, &x)?;
            inputs.push(std::mem::replace(&mut x, y));
            argmax.push(arg);
        }
        Ok(Trace {
            inputs,
            argmax,
            logits: x,
        })
    }

    /// Forward pass that keeps the ReLU masks and max-pool choices of
    /// `pattern`, a trace of the same model on the same input. The result
    /// is the linear piece the backward pass of `pattern` differentiates.
    /// The flag reports whether an unconstrained pass would have switched
    /// any of them.
    pub fn forward_frozen(&self, input: &Tensor<T>, pattern: &Trace<T>) -> Result<(Trace<T>, bool)> {
        self.check_input(input)?;
        if pattern.inputs.len() != self.layers.len() || pattern.inputs[0].shape() != input.shape() {
            return shape_err("pattern trace does not belong to this model and input");
        }
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut argmax = Vec::with_capacity(n);
        let mut switched = false;
        let mut x = input.clone();
        for (i, (spec, params)) in self.descriptor.layers.iter().zip(&self.layers).enumerate() {
            let (y, arg) = match spec {
                LayerSpec::Relu => {
                    let mask = pattern.inputs[i].data();
                    let data = x
                        .data()
                        .iter()
                        .zip(mask)
                        .map(|(&v, &m)| {
                            switched |= (v > T::zero()) != (m > T::zero());
                            if m > T::zero() {
                                v
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    (Tensor::from_vec(x.shape(), data)?, None)
                }
                LayerSpec::MaxPool2x2 => {
                    let (y, own) = maxpool2x2(&x)?;
                    let fixed = pattern.argmax[i].clone().unwrap_or_default();
                    switched |= own != fixed;
                    let data = fixed.iter().map(|&k| x.data()[k]).collect();
                    (Tensor::from_vec(y.shape(), data)?, Some(fixed))
                }
                _ => self.layer_forward(spec, params, &x)?,
            };
            inputs.push(std::mem::replace(&mut x, y));
            argmax.push(arg);
        }
        Ok((
            Trace {
                inputs,
                argmax,
                logits: x,
            },
            switched,
        ))
    }

    /// Backpropagate `grad_logits`, plus optional gradients on the stage
    /// feature maps, through a recorded trace.
    ///
    /// Convolution gradients are taken with respect to the effective
    /// weights (the generated bank for generated layers); use
    /// [`ModelState::reduce_grads`] to map them onto learnable parameters.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        grad_logits: &Tensor<T>,
        stage_grads: Option<&[Tensor<T>]>,
    ) -> Result<Vec<LayerGrad<T>>> {
        grad_logits.expect_shape(trace.logits.shape())?;
        let boundaries = &self.descriptor.stage_boundaries;
        if let Some(sg) = stage_grads {
            if sg.len() != boundaries.len() {
                return shape_err("one gradient per stage boundary required");
            }
        }
        let mut grads: Vec<LayerGrad<T>> = (0..self.layers.len()).map(|_| LayerGrad::None).collect();
        let mut g = grad_logits.clone();
        for i in (0..self.layers.len()).rev() {
            let x = &trace.inputs[i];
            let spec = &self.descriptor.layers[i];
            g = match (spec, &self.layers[i]) {
                (LayerSpec::MonoConv { geom, .. }, LayerParams::Mono(bank)) => {
                    let (gi, gw) = conv2d_backward(x, &bank.generated, &g, geom)?;
                    grads[i] = LayerGrad::Conv(gw);
                    gi
                }
                (LayerSpec::StdConv { geom }, LayerParams::Conv(w)) => {
                    let (gi, gw) = conv2d_backward(x, w, &g, geom)?;
                    grads[i] = LayerGrad::Conv(gw);
                    gi
                }
                (LayerSpec::Relu, _) => relu_backward(x, &g)?,
                (LayerSpec::MaxPool2x2, _) => {
                    maxpool2x2_backward(x.shape(), trace.argmax[i].as_deref().unwrap_or(&[]), &g)?
                }
                (LayerSpec::GlobalAvgPool, _) => avgpool_global_backward(x.shape(), &g)?,
                (LayerSpec::Dense { .. }, LayerParams::Dense { weights, .. }) => {
                    let (gx, gw, gb) = dense_backward(x, weights, &g)?;
                    grads[i] = LayerGrad::Dense { weights: gw, bias: gb };
                    gx
                }
                _ => return shape_err("layer parameters do not match spec"),
            };
            if let (Some(sg), Some(pos)) = (stage_grads, boundaries.iter().position(|&b| b == i)) {
                g.axpy(T::one(), &sg[pos])?;
            }
        }
        Ok(grads)
    }

    /// Map effective-weight gradients onto learnable parameters, in
    /// [`ModelState::learnables`] order.
    pub fn reduce_grads(&self, grads: &[LayerGrad<T>]) -> Result<Vec<Tensor<T>>> {
        self.reduce_grads_with(grads, fgf_derivative)
    }

    /// [`ModelState::reduce_grads`] with a caller-supplied FGF derivative.
    pub fn reduce_grads_with(
        &self,
        grads: &[LayerGrad<T>],
        derivative: impl Fn(T, T, FgfKind) -> T + Copy,
    ) -> Result<Vec<Tensor<T>>> {
        if grads.len() != self.layers.len() {
            return shape_err("one gradient per layer required");
        }
        let mut out = Vec::new();
        for (params, g) in self.layers.iter().zip(grads) {
            match (params, g) {
                (LayerParams::Mono(bank), LayerGrad::Conv(gw)) => out.push(backward_with(
                    &bank.seed_filter,
                    &bank.betas,
                    &bank.config,
                    gw,
                    derivative,
                )?),
                (LayerParams::Conv(_), LayerGrad::Conv(gw)) => out.push(gw.clone()),
                (LayerParams::Dense { .. }, LayerGrad::Dense { weights, bias }) => {
                    out.push(weights.clone());
                    out.push(bias.clone());
                }
                (LayerParams::None, LayerGrad::None) => {}
                _ => return shape_err("gradient list does not match parameters"),
            }
        }
        Ok(out)
    }

    /// Learnable tensors: seed filters, ordinary conv weights, dense
    /// weights and biases, in layer order.
    pub fn learnables(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for p in &self.layers {
            match p {
                LayerParams::Mono(bank) => out.push(&bank.seed_filter),
                LayerParams::Conv(w) => out.push(w),
                LayerParams::Dense { weights, bias } => {
                    out.push(weights);
                    out.push(bias);
                }
                LayerParams::None => {}
            }
        }
        out
    }

    /// Apply `update(index, tensor)` to every learnable tensor, then refresh
    /// the generated banks.
    pub fn update_learnables(&mut self, mut update: impl FnMut(usize, &mut Tensor<T>)) -> Result<()> {
        let mut idx = 0;
        for p in &mut self.layers {
            match p {
                LayerParams::Mono(bank) => {
                    let mut seed = bank.seed_filter.clone();
                    update(idx, &mut seed);
                    idx += 1;
                    bank.seed_filter = seed;
                }
                LayerParams::Conv(w) => {
                    update(idx, w);
                    idx += 1;
                }
                LayerParams::Dense { weights, bias } => {
                    update(idx, weights);
                    update(idx + 1, bias);
                    idx += 2;
                }
                LayerParams::None => {}
            }
        }
        self.refresh_banks()
    }

    /// Re-expand every generated bank from its current seed filter.
    pub fn refresh_banks(&mut self) -> Result<()> {
        for p in &mut self.layers {
            if let LayerParams::Mono(bank) = p {
                let seed = bank.seed_filter.clone();
                bank.regenerate(&seed)?;
            }
        }
        Ok(())
    }

    pub fn learnable_count(&self) -> usize {
        self.learnables().iter().map(|t| t.len()).sum()
    }

    /// Ordinary-convolution twin whose weights are the generated banks.
    pub fn materialize(&self) -> ModelState<T> {
        let layers = self
            .layers
            .iter()
            .map(|p| match p {
                LayerParams::Mono(bank) => LayerParams::Conv(bank.generated.clone()),
                other => other.clone(),
            })
            .collect();
        ModelState {
            descriptor: self.descriptor.standard_twin(),
            layers,
        }
    }

    pub fn cast<U: Real>(&self) -> ModelState<U> {
        let layers = self
            .layers
            .iter()
            .map(|p| match p {
                LayerParams::None => LayerParams::None,
                LayerParams::Mono(bank) => LayerParams::Mono(bank.cast()),
                LayerParams::Conv(w) => LayerParams::Conv(w.cast()),
                LayerParams::Dense { weights, bias } => LayerParams::Dense {
                    weights: weights.cast(),
                    bias: bias.cast(),
                },
            })
            .collect();
        ModelState {
            descriptor: self.descriptor.clone(),
            layers,
        }
    }
}

/// Gradient with respect to a layer's effective weights.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerGrad<T> {
    None,
    Conv(Tensor<T>),
    Dense { weights: Tensor<T>, bias: Tensor<T> },
}

impl<T: Real> LayerGrad<T> {
    pub fn accumulate(&mut self, other: &LayerGrad<T>) -> Result<()> {
        match (self, other) {
            (LayerGrad::None, LayerGrad::None) => Ok(()),
            (LayerGrad::Conv(a), LayerGrad::Conv(b)) => a.axpy(T::one(), b),
            (LayerGrad::Dense { weights, bias }, LayerGrad::Dense { weights: w2, bias: b2 }) => {
                weights.axpy(T::one(), w2)?;
                bias.axpy(T::one(), b2)
            }
            _ => shape_err("gradient kinds differ"),
        }
    }
}
