//! Filter generation functions and exponent sampling.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Xoshiro256StarStar;
use crate::tensor::Real;

/// Elementwise map applied to the seed filter to derive each bank member.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FgfKind {
    /// `sign(w) |w|^beta`
    Monomial,
    /// `exp(-(beta w)^2)`
    Gaussian,
    /// `sqrt(1 + (beta w)^2)`
    Multiquadric,
    /// `1 / (1 + (beta w)^2)`
    InverseQuadratic,
    /// `1 / sqrt(1 + (beta w)^2)`
    InverseMultiquadric,
}

impl FgfKind {
    pub const ALL: [FgfKind; 5] = [
        FgfKind::Monomial,
        FgfKind::Gaussian,
        FgfKind::Multiquadric,
        FgfKind::InverseQuadratic,
        FgfKind::InverseMultiquadric,
    ];

    /// Wire code used in MONO1 packets.
    pub fn code(self) -> u8 {
        match self {
            FgfKind::Monomial => 0,
            FgfKind::Gaussian => 1,
            FgfKind::Multiquadric => 2,
            FgfKind::InverseQuadratic => 3,
            FgfKind::InverseMultiquadric => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::Malformed(format!("unknown fgf kind {code}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            FgfKind::Monomial => "monomial",
            FgfKind::Gaussian => "gaussian",
            FgfKind::Multiquadric => "multiquadric",
            FgfKind::InverseQuadratic => "inverse-quadratic",
            FgfKind::InverseMultiquadric => "inverse-multiquadric",
        }
    }
}

impl fmt::Display for FgfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FgfKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fgf kind {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FgfConfig {
    pub kind: FgfKind,
    pub beta_lower: f32,
    pub beta_upper: f32,
    pub seed: u64,
    /// Number of generated filters.
    pub m: usize,
    /// Number of FGF terms summed per filter; 1 is the plain single-term map.
    pub terms: usize,
}

pub const DEFAULT_BETA_LOWER: f32 = 1.0;
pub const DEFAULT_BETA_UPPER: f32 = 7.0;

impl FgfConfig {
    /// Builds a config with the lower exponent bound clamped to at least 1,
    /// which keeps the monomial derivative finite at zero.
    pub fn new(kind: FgfKind, beta_lower: f32, beta_upper: f32, seed: u64, m: usize) -> Self {
        let beta_lower = beta_lower.max(1.0);
        Self {
            kind,
            beta_lower,
            beta_upper: beta_upper.max(beta_lower),
            seed,
            m,
            terms: 1,
        }
    }

    pub fn monomial(seed: u64, m: usize) -> Self {
        Self::new(FgfKind::Monomial, DEFAULT_BETA_LOWER, DEFAULT_BETA_UPPER, seed, m)
    }

    pub fn with_terms(mut self, terms: usize) -> Self {
        self.terms = terms;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = (self.beta_lower, self.beta_upper);
        if !(a > 0.0 && a <= b && b.is_finite()) {
            return Err(Error::Config(format!("need 0 < a <= b, got a={a}, b={b}")));
        }
        if self.m == 0 || self.terms == 0 {
            return Err(Error::Config("m and terms must be >= 1".into()));
        }
        Ok(())
    }
}

/// Exponents for every (filter, term) pair, filter-major: entry
/// `i * terms + t`. Values are uniform on `[a, b]` from the documented
/// xoshiro256** stream.
pub fn sample_betas(config: &FgfConfig) -> Vec<f32> {
    let mut rng = Xoshiro256StarStar::seed_from_u64(config.seed);
    let (a, b) = (config.beta_lower as f64, config.beta_upper as f64);
    (0..config.m * config.terms)
        .map(|_| rng.uniform(a, b) as f32)
        .collect()
}

#[inline]
pub fn apply_fgf<T: Real>(w: T, beta: T, kind: FgfKind) -> T {
    let one = T::one();
    match kind {
        FgfKind::Monomial => {
            if w == T::zero() {
                T::zero()
            } else {
                w.signum() * w.abs().powf(beta)
            }
        }
        FgfKind::Gaussian => (-(beta * w) * (beta * w)).exp(),
        FgfKind::Multiquadric => (one + (beta * w) * (beta * w)).sqrt(),
        FgfKind::InverseQuadratic => one / (one + (beta * w) * (beta * w)),
        FgfKind::InverseMultiquadric => one / (one + (beta * w) * (beta * w)).sqrt(),
    }
}

/// Analytic `d/dw apply_fgf(w, beta, kind)`.
#[inline]
pub fn fgf_derivative<T: Real>(w: T, beta: T, kind: FgfKind) -> T {
    let one = T::one();
    let two = T::of(2.0);
    let bw2 = (beta * w) * (beta * w);
    match kind {
        FgfKind::Monomial => {
            if w == T::zero() {
                if beta == one {
                    one
                } else {
                    T::zero()
                }
            } else {
                beta * w.abs().powf(beta - one)
            }
        }
        FgfKind::Gaussian => -two * beta * beta * w * (-bw2).exp(),
        FgfKind::Multiquadric => beta * beta * w / (one + bw2).sqrt(),
        FgfKind::InverseQuadratic => -two * beta * beta * w / ((one + bw2) * (one + bw2)),
        FgfKind::InverseMultiquadric => -beta * beta * w / ((one + bw2) * (one + bw2).sqrt()),
    }
}
