use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

fn nchw<T: Real>(t: &Tensor<T>) -> Result<[usize; 4]> {
    if t.rank() != 4 {
        return shape_err(format!("expected [N,C,H,W], got {:?}", t.shape()));
    }
    Ok([t.dim(0), t.dim(1), t.dim(2), t.dim(3)])
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// Returns the pooled tensor and, per output element, the flat input index
/// of the winning element (first maximum in row-major window order).
pub fn maxpool2x2<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = nchw(input)?;
    if h < 2 || w < 2 {
        return shape_err(format!("maxpool needs H,W >= 2, got {h}x{w}"));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, oh, ow], out)?, argmax))
}

pub fn maxpool2x2_backward<T: Real>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.len() {
        return shape_err("maxpool argmax/gradient length mismatch");
    }
    let mut g = Tensor::zeros(input_shape);
    let gd = g.data_mut();
    for (&i, &v) in argmax.iter().zip(grad_out.data()) {
        gd[i] += v;
    }
    Ok(g)
}

/// Mean over the spatial dims: `[N,C,H,W] -> [N,C]`.
pub fn avgpool_global<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = nchw(input)?;
    let inv = T::one() / T::of((h * w) as f64);
    let data = input
        .data()
        .chunks_exact(h * w)
        .map(|plane| plane.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_vec(&[n, c], data)
}

pub fn avgpool_global_backward<T: Real>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w) = (input_shape[2], input_shape[3]);
    grad_out.expect_shape(&input_shape[..2])?;
    let inv = T::one() / T::of((h * w) as f64);
    let mut data = Vec::with_capacity(grad_out.len() * h * w);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat(g * inv).take(h * w));
    }
    Tensor::from_vec(input_shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_picks_window_maximum() {
        let x = Tensor::from_vec(
            &[1, 1, 2, 4],
            vec![1.0f32, 5.0, 2.0, 2.0, 3.0, 4.0, 2.0, 7.0],
        )
        .unwrap();
        let (y, arg) = maxpool2x2(&x).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0]);
        assert_eq!(arg, vec![1, 7]);
        let g = maxpool2x2_backward(x.shape(), &arg, &Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn odd_extent_drops_last_row() {
        let x = Tensor::<f32>::zeros(&[1, 2, 7, 7]);
        assert_eq!(maxpool2x2(&x).unwrap().0.shape(), &[1, 2, 3, 3]);
    }

    #[test]
    fn global_average() {
        let x = Tensor::from_vec(&[1, 2, 1, 2], vec![1.0f32, 3.0, -2.0, 2.0]).unwrap();
        assert_eq!(avgpool_global(&x).unwrap().data(), &[2.0, 0.0]);
    }
}
