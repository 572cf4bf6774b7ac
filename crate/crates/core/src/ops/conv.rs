//! 2-D convolution (cross-correlation) with zero padding, no bias.
//!
//! Each image is unfolded into a patch matrix and multiplied with the
//! weights. The summation order depends only on the layer shapes, so
//! results do not change with how a batch is split across workers.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::{gemm, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    /// Stride 1, "same" padding for odd kernels.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 {
            return shape_err(format!("kernel and stride must be >= 1: {self:?}"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return shape_err(format!("channel counts must be >= 1: {self:?}"));
        }
        Ok(())
    }

    /// Output spatial size for an input extent, or an error when the
    /// geometry does not tile the padded input exactly.
    pub fn output_extent(&self, extent: usize) -> Result<usize> {
        let padded = extent + 2 * self.padding;
        if padded < self.kernel {
            return shape_err(format!(
                "kernel {} larger than padded extent {padded}",
                self.kernel
            ));
        }
        let span = padded - self.kernel;
        if span % self.stride != 0 {
            return shape_err(format!(
                "extent {extent} with pad {} and kernel {} is not divisible by stride {}",
                self.padding, self.kernel, self.stride
            ));
        }
        Ok(span / self.stride + 1)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    /// Weights per filter, `C_in * k * k`.
    pub fn filter_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn check(&self, input: &[usize], weights: &[usize]) -> Result<(usize, usize)> {
        self.validate()?;
        if input.len() != 4 {
            return shape_err(format!("conv input must be [N,C,H,W], got {input:?}"));
        }
        if weights != self.weight_shape() {
            return shape_err(format!(
                "conv weights {weights:?} do not match geometry {:?}",
                self.weight_shape()
            ));
        }
        if input[1] != self.in_channels {
            return shape_err(format!(
                "input has {} channels, filters expect {}",
                input[1], self.in_channels
            ));
        }
        Ok((self.output_extent(input[2])?, self.output_extent(input[3])?))
    }
}

/// Range of output columns `ox` whose input column `ox*stride + kx - pad`
/// lies inside `[0, width)`.
#[inline]
fn valid_cols(out_w: usize, width: usize, kx: usize, stride: usize, pad: usize) -> (usize, usize) {
    // smallest ox with ox*stride + kx >= pad
    let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(stride) };
    // largest ox with ox*stride + kx - pad <= width - 1
    let limit = width + pad - 1;
    let hi = if kx > limit { 0 } else { ((limit - kx) / stride + 1).min(out_w) };
    (lo.min(hi), hi)
}

/// Unfold one `[c, h, w]` image into a `[c·k·k, oh·ow]` patch matrix.
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, geom: &ConvGeometry, oh: usize, ow: usize, cols: &mut [T]) {
    let (k, s, p) = (geom.kernel, geom.stride, geom.padding);
    let plane = oh * ow;
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ch * k + ky) * k + kx) * plane..][..plane];
                let (lo, hi) = valid_cols(ow, w, kx, s, p);
                for oy in 0..oh {
                    let out = &mut row[oy * ow..(oy + 1) * ow];
                    let iy = oy * s + ky;
                    if iy < p || iy - p >= h || lo >= hi {
                        out.fill(T::zero());
                        continue;
                    }
                    let line = &src[(iy - p) * w..(iy - p + 1) * w];
                    out[..lo].fill(T::zero());
                    out[hi..].fill(T::zero());
                    if s == 1 {
                        let off = lo + kx - p;
                        out[lo..hi].copy_from_slice(&line[off..off + hi - lo]);
                    } else {
                        for ox in lo..hi {
                            out[ox] = line[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a patch matrix back onto an image.
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, geom: &ConvGeometry, oh: usize, ow: usize, x: &mut [T]) {
    let (k, s, p) = (geom.kernel, geom.stride, geom.padding);
    let plane = oh * ow;
    for ch in 0..c {
        let dst = &mut x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ch * k + ky) * k + kx) * plane..][..plane];
                let (lo, hi) = valid_cols(ow, w, kx, s, p);
                if lo >= hi {
                    continue;
                }
                for oy in 0..oh {
                    let iy = oy * s + ky;
                    if iy < p || iy - p >= h {
                        continue;
                    }
                    let line = &mut dst[(iy - p) * w..(iy - p + 1) * w];
                    let src = &row[oy * ow..(oy + 1) * ow];
                    if s == 1 {
                        let off = lo + kx - p;
                        for (d, &v) in line[off..off + hi - lo].iter_mut().zip(&src[lo..hi]) {
                            *d += v;
                        }
                    } else {
                        for ox in lo..hi {
                            line[ox * s + kx - p] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    geom: &ConvGeometry,
) -> Result<Tensor<T>> {
    let (oh, ow) = geom.check(input.shape(), weights.shape())?;
    let [n, c, h, w] = [input.dim(0), input.dim(1), input.dim(2), input.dim(3)];
    let m = geom.out_channels;
    let (depth, plane) = (geom.filter_len(), oh * ow);
    let mut out = Tensor::zeros(&[n, m, oh, ow]);
    let mut cols = vec![T::zero(); depth * plane];
    for b in 0..n {
        im2col(&input.data()[b * c * h * w..(b + 1) * c * h * w], c, h, w, geom, oh, ow, &mut cols);
        let y = &mut out.data_mut()[b * m * plane..(b + 1) * m * plane];
        gemm(m, depth, plane, weights.data(), false, &cols, false, y, false);
    }
    Ok(out)
}

/// Gradients of `sum(grad_out * conv2d_forward(input, weights))` with
/// respect to the input and the weights.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    geom: &ConvGeometry,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (oh, ow) = geom.check(input.shape(), weights.shape())?;
    let [n, c, h, w] = [input.dim(0), input.dim(1), input.dim(2), input.dim(3)];
    let m = geom.out_channels;
    let (depth, plane) = (geom.filter_len(), oh * ow);
    grad_out.expect_shape(&[n, m, oh, ow])?;
    let mut gin = Tensor::zeros(input.shape());
    let mut gw = Tensor::zeros(weights.shape());
    let mut cols = vec![T::zero(); depth * plane];
    for b in 0..n {
        let image = b * c * h * w..(b + 1) * c * h * w;
        let g = &grad_out.data()[b * m * plane..(b + 1) * m * plane];
        im2col(&input.data()[image.clone()], c, h, w, geom, oh, ow, &mut cols);
        gemm(m, plane, depth, g, false, &cols, true, gw.data_mut(), true);
        gemm(depth, m, plane, weights.data(), true, g, false, &mut cols, false);
        col2im(&cols, c, h, w, geom, oh, ow, &mut gin.data_mut()[image]);
    }
    Ok((gin, gw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xoshiro256StarStar;

    fn random(shape: &[usize], rng: &mut Xoshiro256StarStar) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn scalar_product() {
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0f32]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![3.0f32]).unwrap();
        let g = ConvGeometry { in_channels: 1, out_channels: 1, kernel: 1, stride: 1, padding: 0 };
        assert_eq!(conv2d_forward(&x, &w, &g).unwrap().data(), &[6.0]);
    }

    #[test]
    fn sum_of_ones() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0f32);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0f32);
        let g = ConvGeometry { in_channels: 1, out_channels: 1, kernel: 3, stride: 1, padding: 0 };
        let y = conv2d_forward(&x, &w, &g).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        let g = ConvGeometry::same(3, 1, 3);
        assert!(conv2d_forward(&x, &w, &g).is_err());
    }

    #[test]
    fn non_tiling_stride_is_an_error() {
        let g = ConvGeometry { in_channels: 1, out_channels: 1, kernel: 3, stride: 2, padding: 0 };
        assert!(g.output_extent(6).is_err());
        assert_eq!(g.output_extent(7).unwrap(), 3);
    }

    #[test]
    fn identity_1x1_weight_grad_is_input_sum() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(3);
        let x = random(&[2, 1, 4, 4], &mut rng);
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let g = ConvGeometry { in_channels: 1, out_channels: 1, kernel: 1, stride: 1, padding: 0 };
        let ones = Tensor::full(&[2, 1, 4, 4], 1.0);
        let (gi, gw) = conv2d_backward(&x, &w, &ones, &g).unwrap();
        assert!((gw.data()[0] - x.sum()).abs() < 1e-12);
        assert_eq!(gi, ones);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(4);
        let x = random(&[1, 2, 5, 5], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let g = ConvGeometry::same(2, 3, 3);
        let (gi, gw) = conv2d_backward(&x, &w, &Tensor::zeros(&[1, 3, 5, 5]), &g).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
        assert!(gw.data().iter().all(|&v| v == 0.0));
    }
}
