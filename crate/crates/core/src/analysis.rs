//! How well a generated bank, recombined linearly after ReLU, reproduces the
//! rectified response of an arbitrary filter.
//!
//! For patches `x_p`, the target response is `d_p = relu(w . x_p)` and the
//! bank responses are `c_p = relu(W x_p)`. We solve
//!
//! ```text
//! min_alpha  sum_p (d_p - c_p . alpha)^2
//! ```
//!
//! through the damped normal equations `(C^T C + lambda I) alpha = C^T d`
//! with a Cholesky factorization in f64.

use crate::bank::FilterBank;
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

pub const TIKHONOV_LAMBDA: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AlphaFit {
    pub alpha: Vec<f32>,
    /// Root-mean-square residual over patches.
    pub residual: f32,
}

/// Rectified responses `relu(W x_p)` of each patch to every bank filter,
/// row-major `[P, m]`, together with the rectified target responses.
pub fn rectified_responses<T: Real>(
    x_patches: &Tensor<T>,
    target_filter: &Tensor<T>,
    bank: &FilterBank<T>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = target_filter.len();
    if x_patches.rank() != 2 || x_patches.dim(1) != n {
        return shape_err(format!(
            "patches {:?} incompatible with filter of {n} weights",
            x_patches.shape()
        ));
    }
    if bank.generated.len() != bank.config.m * n {
        return shape_err("bank filters and target filter differ in size");
    }
    let m = bank.config.m;
    let p = x_patches.dim(0);
    let w: Vec<f64> = target_filter.data().iter().map(|v| v.f64()).collect();
    let bankf: Vec<f64> = bank.generated.data().iter().map(|v| v.f64()).collect();
    let mut c = Vec::with_capacity(p * m);
    let mut d = Vec::with_capacity(p);
    for row in x_patches.data().chunks_exact(n) {
        let x: Vec<f64> = row.iter().map(|v| v.f64()).collect();
        d.push(dot(&w, &x).max(0.0));
        for f in bankf.chunks_exact(n) {
            c.push(dot(f, &x).max(0.0));
        }
    }
    Ok((c, d))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn alpha_recovery<T: Real>(
    x_patches: &Tensor<T>,
    target_filter: &Tensor<T>,
    bank: &FilterBank<T>,
) -> Result<AlphaFit> {
    let m = bank.config.m;
    let (c, d) = rectified_responses(x_patches, target_filter, bank)?;
    let p = d.len();
    if p < m {
        return shape_err(format!("need at least m={m} patches, got {p}"));
    }
    if c.iter().all(|&v| v == 0.0) {
        return Err(Error::AllZeroResponses);
    }

    let mut gram = vec![0.0f64; m * m];
    let mut rhs = vec![0.0f64; m];
    for (row, &dp) in c.chunks_exact(m).zip(&d) {
        for i in 0..m {
            let ci = row[i];
            if ci == 0.0 {
                continue;
            }
            rhs[i] += ci * dp;
            for j in 0..=i {
                gram[i * m + j] += ci * row[j];
            }
        }
    }
    for i in 0..m {
        gram[i * m + i] += TIKHONOV_LAMBDA;
    }
    let alpha = cholesky_solve(&mut gram, &rhs, m)?;

    let sse: f64 = c
        .chunks_exact(m)
        .zip(&d)
        .map(|(row, &dp)| {
            let r = dp - dot(row, &alpha);
            r * r
        })
        .sum();
    Ok(AlphaFit {
        alpha: alpha.iter().map(|&a| a as f32).collect(),
        residual: (sse / p as f64).sqrt() as f32,
    })
}

/// Solves `A x = b` for symmetric positive definite `A` given by its lower
/// triangle (row-major, overwritten with the factor).
fn cholesky_solve(a: &mut [f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= a[j * n + k] * a[j * n + k];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::Malformed(format!(
                "normal equations not positive definite at pivot {j}"
            )));
        }
        let l = diag.sqrt();
        a[j * n + j] = l;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / l;
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= a[i * n + k] * y[k];
        }
        y[i] = v / a[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut v = y[i];
        for k in i + 1..n {
            v -= a[k * n + i] * x[k];
        }
        x[i] = v / a[i * n + i];
    }
    Ok(x)
}
