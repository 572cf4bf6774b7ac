use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

/// `y = x W^T + b` for `x: [N, in]`, `W: [out, in]`, `b: [out]`.
pub fn dense_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1) || b.shape() != [w.dim(0)] {
        return shape_err(format!(
            "dense: x {:?}, w {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        ));
    }
    let (n, out) = (x.dim(0), w.dim(0));
    let mut y = Vec::with_capacity(n * out);
    for row in x.data().chunks_exact(x.dim(1)) {
        for (wr, &bias) in w.data().chunks_exact(w.dim(1)).zip(b.data()) {
            let dot: T = wr.iter().zip(row).map(|(&a, &v)| a * v).sum();
            y.push(dot + bias);
        }
    }
    Tensor::from_vec(&[n, out], y)
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub fn dense_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, inp, out) = (x.dim(0), x.dim(1), w.dim(0));
    grad_out.expect_shape(&[n, out])?;
    let mut gx = Tensor::zeros(&[n, inp]);
    let mut gw = Tensor::zeros(&[out, inp]);
    let mut gb = Tensor::zeros(&[out]);
    for s in 0..n {
        let xr = x.outer(s);
        let gr = grad_out.outer(s);
        let gxr = gx.outer_mut(s);
        for (o, &g) in gr.iter().enumerate() {
            let wr = &w.data()[o * inp..(o + 1) * inp];
            for (gi, &wv) in gxr.iter_mut().zip(wr) {
                *gi += g * wv;
            }
        }
        for (o, &g) in gr.iter().enumerate() {
            let gwr = &mut gw.data_mut()[o * inp..(o + 1) * inp];
            for (gwi, &xv) in gwr.iter_mut().zip(xr) {
                *gwi += g * xv;
            }
            gb.data_mut()[o] += g;
        }
    }
    Ok((gx, gw, gb))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_map() {
        let x = Tensor::from_vec(&[1, 2], vec![1.0f32, 2.0]).unwrap();
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 3.0, -1.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.5, 0.0]).unwrap();
        assert_eq!(dense_forward(&x, &w, &b).unwrap().data(), &[1.5, 1.0]);
    }
}
