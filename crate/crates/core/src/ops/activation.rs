use crate::error::Result;
use crate::tensor::{Real, Tensor};

pub fn relu<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Passes the upstream gradient where the forward input was strictly
/// positive; the subgradient at zero is taken as zero.
pub fn relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.expect_shape(input.shape())?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_negatives() {
        let t = Tensor::from_vec(&[3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::from_vec(&[4], vec![-1.0f32, -0.5, -3.0, -1e-9]).unwrap();
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_is_zero_at_kink() {
        let t = Tensor::from_vec(&[3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        let g = Tensor::full(&[3], 5.0f32);
        assert_eq!(relu_backward(&t, &g).unwrap().data(), &[0.0, 0.0, 5.0]);
    }
}
