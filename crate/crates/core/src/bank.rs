//! Expansion of a seed filter into a full filter bank, and the reverse-mode
//! pass that routes bank gradients back onto the seed.
//!
//! Filter `i` of the bank is
//!
//! ```text
//! z_i = (1/T) * sum_t fgf(seed, beta[i*T + t])      elementwise
//! generated_i = (z_i - mean(z_i)) / ||z_i - mean(z_i)||_2
//! ```
//!
//! so the bank is a pure function of the seed filter bits and the
//! [`FgfConfig`].

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::fgf::{apply_fgf, fgf_derivative, sample_betas, FgfConfig, FgfKind};
use crate::tensor::{Real, Tensor};

/// Denominator guard for the normalization of (near-)constant filters.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterBank<T = f32> {
    pub seed_filter: Tensor<T>,
    pub betas: Vec<f32>,
    pub generated: Tensor<T>,
    pub config: FgfConfig,
}

/// Centered vector and its L2 norm, or `None` for a degenerate (constant)
/// input.
fn center<T: Real>(z: &[T]) -> Option<(Vec<T>, T)> {
    if z.iter().all(|&v| v == z[0]) {
        return None;
    }
    let mean = z.iter().copied().sum::<T>() / T::of(z.len() as f64);
    let u: Vec<T> = z.iter().map(|&v| v - mean).collect();
    let norm = u.iter().map(|&v| v * v).sum::<T>().sqrt();
    if norm.f64() <= NORM_EPS {
        return None;
    }
    Some((u, norm))
}

fn normalize_slice<T: Real>(z: &[T], out: &mut [T]) {
    match center(z) {
        Some((u, norm)) => {
            for (o, v) in out.iter_mut().zip(u) {
                *o = v / norm;
            }
        }
        None => out.fill(T::zero()),
    }
}

/// Mean-center then scale to unit L2 norm. Constant inputs map to zeros.
pub fn normalize_filter<T: Real>(z: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(z.shape());
    normalize_slice(z.data(), out.data_mut());
    out
}

/// Pre-normalization response `z_i` of filter `i`.
fn raw_filter<T: Real>(seed: &[T], betas: &[f32], kind: FgfKind, out: &mut [T]) {
    let terms = betas.len();
    out.fill(T::zero());
    for &beta in betas {
        let beta = T::of(beta as f64);
        for (o, &w) in out.iter_mut().zip(seed) {
            *o += apply_fgf(w, beta, kind);
        }
    }
    if terms > 1 {
        let inv = T::one() / T::of(terms as f64);
        for o in out.iter_mut() {
            *o *= inv;
        }
    }
}

fn check_seed<T: Real>(seed_filter: &Tensor<T>, config: &FgfConfig) -> Result<()> {
    config.validate()?;
    if seed_filter.rank() != 3 {
        return shape_err(format!("seed filter must be [C,k,k], got {:?}", seed_filter.shape()));
    }
    if seed_filter.len() < 2 {
        return shape_err("seed filter needs at least two elements");
    }
    Ok(())
}

pub fn expand_bank<T: Real>(seed_filter: &Tensor<T>, config: &FgfConfig) -> Result<FilterBank<T>> {
    check_seed(seed_filter, config)?;
    let betas = sample_betas(config);
    let generated = generate(seed_filter, &betas, config);
    Ok(FilterBank {
        seed_filter: seed_filter.clone(),
        betas,
        generated,
        config: *config,
    })
}

fn generate<T: Real>(seed_filter: &Tensor<T>, betas: &[f32], config: &FgfConfig) -> Tensor<T> {
    let n = seed_filter.len();
    let mut shape = vec![config.m];
    shape.extend_from_slice(seed_filter.shape());
    let mut generated = Tensor::zeros(&shape);
    let mut z = vec![T::zero(); n];
    for i in 0..config.m {
        raw_filter(
            seed_filter.data(),
            &betas[i * config.terms..(i + 1) * config.terms],
            config.kind,
            &mut z,
        );
        normalize_slice(&z, generated.outer_mut(i));
    }
    generated
}

impl<T: Real> FilterBank<T> {
    /// Re-expand from a new seed filter, reusing the sampled exponents.
    pub fn regenerate(&mut self, seed_filter: &Tensor<T>) -> Result<()> {
        check_seed(seed_filter, &self.config)?;
        self.generated = generate(seed_filter, &self.betas, &self.config);
        self.seed_filter = seed_filter.clone();
        Ok(())
    }

    pub fn backward(&self, grad_generated: &Tensor<T>) -> Result<Tensor<T>> {
        backward_with(
            &self.seed_filter,
            &self.betas,
            &self.config,
            grad_generated,
            fgf_derivative,
        )
    }

    pub fn cast<U: Real>(&self) -> FilterBank<U> {
        FilterBank {
            seed_filter: self.seed_filter.cast(),
            betas: self.betas.clone(),
            generated: self.generated.cast(),
            config: self.config,
        }
    }
}

/// Gradient of `<grad_generated, expand_bank(seed).generated>` with respect
/// to the seed filter.
pub fn bank_backward<T: Real>(
    seed_filter: &Tensor<T>,
    config: &FgfConfig,
    grad_generated: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_seed(seed_filter, config)?;
    let betas = sample_betas(config);
    backward_with(seed_filter, &betas, config, grad_generated, fgf_derivative)
}

/// Same as [`bank_backward`] with a caller-supplied FGF derivative; the
/// gradient checker uses this to inject faults.
pub fn backward_with<T: Real>(
    seed_filter: &Tensor<T>,
    betas: &[f32],
    config: &FgfConfig,
    grad_generated: &Tensor<T>,
    derivative: impl Fn(T, T, FgfKind) -> T,
) -> Result<Tensor<T>> {
    let n = seed_filter.len();
    let mut expected = vec![config.m];
    expected.extend_from_slice(seed_filter.shape());
    grad_generated.expect_shape(&expected)?;

    let seed = seed_filter.data();
    let terms = config.terms;
    let inv_terms = T::one() / T::of(terms as f64);
    let inv_n = T::one() / T::of(n as f64);
    let mut grad_seed = Tensor::zeros(seed_filter.shape());
    let mut z = vec![T::zero(); n];
    for i in 0..config.m {
        let g = grad_generated.outer(i);
        if g.iter().all(|&v| v == T::zero()) {
            continue;
        }
        let filter_betas = &betas[i * terms..(i + 1) * terms];
        raw_filter(seed, filter_betas, config.kind, &mut z);
        let Some((u, s)) = center(&z) else {
            continue;
        };
        // J^T g with J = P/s - u u^T / s^3, P the centering projector.
        let g_mean = g.iter().copied().sum::<T>() * inv_n;
        let ug: T = u.iter().zip(g).map(|(&a, &b)| a * b).sum();
        let s3 = s * s * s;
        for (j, out) in grad_seed.data_mut().iter_mut().enumerate() {
            let gz = (g[j] - g_mean) / s - u[j] * ug / s3;
            let mut dz = T::zero();
            for &beta in filter_betas {
                dz += derivative(seed[j], T::of(beta as f64), config.kind);
            }
            if terms > 1 {
                dz *= inv_terms;
            }
            *out += gz * dz;
        }
    }
    Ok(grad_seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn normalize_two_elements() {
        let out = normalize_filter(&t(&[2], &[0.25, -4.0]));
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((out.data()[0] - r).abs() < 1e-7);
        assert!((out.data()[1] + r).abs() < 1e-7);
    }

    #[test]
    fn normalize_constant_is_zero() {
        let out = normalize_filter(&Tensor::full(&[4], 5.0f32));
        assert_eq!(out.data(), &[0.0; 4]);
        let out = normalize_filter(&Tensor::full(&[3], 0.1f32));
        assert_eq!(out.data(), &[0.0; 3]);
    }

    #[test]
    fn unit_beta_bank_is_normalized_seed() {
        let seed = t(&[1, 3, 3], &[0.3, -0.2, 0.9, 0.1, -0.7, 0.4, 0.05, -0.15, 0.6]);
        let cfg = FgfConfig::new(FgfKind::Monomial, 1.0, 1.0, 5, 3);
        let bank = expand_bank(&seed, &cfg).unwrap();
        let want = normalize_filter(&seed);
        for i in 0..3 {
            assert_eq!(bank.generated.outer(i), want.data());
        }
    }

    #[test]
    fn composed_hand_example() {
        let seed = t(&[1, 1, 2], &[0.5, -2.0]);
        let cfg = FgfConfig::new(FgfKind::Monomial, 2.0, 2.0, 0, 1);
        let bank = expand_bank(&seed, &cfg).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((bank.generated.data()[0] - r).abs() < 1e-7);
        assert!((bank.generated.data()[1] + r).abs() < 1e-7);
    }

    #[test]
    fn zero_upstream_gives_zero_seed_grad() {
        let seed = t(&[1, 1, 3], &[0.5, -0.2, 0.8]);
        let cfg = FgfConfig::monomial(3, 4);
        let g = bank_backward(&seed, &cfg, &Tensor::zeros(&[4, 1, 1, 3])).unwrap();
        assert_eq!(g.data(), &[0.0; 3]);
    }

    #[test]
    fn single_term_polynomial_equals_plain_map() {
        let seed = t(&[2, 1, 2], &[0.5, -0.2, 0.8, -1.1]);
        let plain = expand_bank(&seed, &FgfConfig::monomial(8, 6)).unwrap();
        let poly = expand_bank(&seed, &FgfConfig::monomial(8, 6).with_terms(1)).unwrap();
        assert_eq!(plain, poly);
    }

    #[test]
    fn rejects_wrong_grad_shape() {
        let seed = t(&[1, 1, 3], &[0.5, -0.2, 0.8]);
        let cfg = FgfConfig::monomial(3, 4);
        assert!(bank_backward(&seed, &cfg, &Tensor::zeros(&[3, 1, 1, 3])).is_err());
    }
}
