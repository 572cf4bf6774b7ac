//! Synthetic corruptions applied to `[0, 1]` images before
//! standardization.
//!
//! Image `i` of a batch draws from its own xoshiro256** stream seeded with
//! `seed ^ i`, where `i` is the image's index in the dataset, so results
//! do not depend on batching or evaluation order. Pixels are visited in
//! `(c, y, x)` order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Xoshiro256StarStar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CorruptionKind {
    GaussianNoise,
    ImpulseNoise,
    Brightness,
    Contrast,
    Pixelate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CorruptionGroup {
    Noise,
    Weather,
    Digital,
}

impl CorruptionGroup {
    pub const ALL: [CorruptionGroup; 3] = [CorruptionGroup::Noise, CorruptionGroup::Weather, CorruptionGroup::Digital];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionGroup::Noise => "Noise",
            CorruptionGroup::Weather => "Weather",
            CorruptionGroup::Digital => "Digital",
        }
    }
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 5] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::Brightness,
        CorruptionKind::Contrast,
        CorruptionKind::Pixelate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian",
            CorruptionKind::ImpulseNoise => "impulse",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Pixelate => "pixelate",
        }
    }

    pub fn group(self) -> CorruptionGroup {
        match self {
            CorruptionKind::GaussianNoise | CorruptionKind::ImpulseNoise => CorruptionGroup::Noise,
            CorruptionKind::Brightness => CorruptionGroup::Weather,
            CorruptionKind::Contrast | CorruptionKind::Pixelate => CorruptionGroup::Digital,
        }
    }

    /// Severity ladder, index 0 is severity 1.
    pub fn ladder(self) -> [f32; 5] {
        match self {
            CorruptionKind::GaussianNoise => [0.04, 0.08, 0.12, 0.18, 0.26],
            CorruptionKind::ImpulseNoise => [0.01, 0.03, 0.06, 0.10, 0.17],
            CorruptionKind::Brightness => [0.1, 0.2, 0.3, 0.4, 0.5],
            CorruptionKind::Contrast => [0.75, 0.6, 0.45, 0.3, 0.2],
            CorruptionKind::Pixelate => [0.9, 0.75, 0.6, 0.45, 0.3],
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown corruption {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(Error::Config(format!("severity must be in 1..=5, got {severity}")));
        }
        Ok(Self { kind, severity, seed })
    }

    pub fn level(&self) -> f32 {
        self.kind.ladder()[(self.severity.clamp(1, 5) - 1) as usize]
    }
}

/// Parses `kind:severity`, e.g. `gaussian:3`.
impl FromStr for CorruptionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, sev) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("expected kind:severity, got {s:?}")))?;
        let severity = sev
            .parse()
            .map_err(|_| Error::Config(format!("bad severity {sev:?}")))?;
        CorruptionSpec::new(kind.parse()?, severity, 0)
    }
}

pub fn corrupt(images: &Tensor<f32>, spec: &CorruptionSpec) -> Tensor<f32> {
    corrupt_at(images, spec, 0)
}

/// Corrupt a batch whose first image has dataset index `first_index`.
pub fn corrupt_at(images: &Tensor<f32>, spec: &CorruptionSpec, first_index: usize) -> Tensor<f32> {
    let [c, h, w] = [images.dim(1), images.dim(2), images.dim(3)];
    let level = spec.level();
    let mut out = images.clone();
    for (i, img) in out.data_mut().chunks_exact_mut(c * h * w).enumerate() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(spec.seed ^ (first_index + i) as u64);
        match spec.kind {
            CorruptionKind::GaussianNoise => {
                for v in img.iter_mut() {
                    *v += (rng.normal() * level as f64) as f32;
                }
            }
            CorruptionKind::ImpulseNoise => {
                let half = level as f64 / 2.0;
                for v in img.iter_mut() {
                    let u = rng.next_f64();
                    if u < half {
                        *v = 0.0;
                    } else if u < level as f64 {
                        *v = 1.0;
                    }
                }
            }
            CorruptionKind::Brightness => {
                for v in img.iter_mut() {
                    *v += level;
                }
            }
            CorruptionKind::Contrast => {
                for v in img.iter_mut() {
                    *v = (*v - 0.5) * level + 0.5;
                }
            }
            CorruptionKind::Pixelate => {
                for plane in img.chunks_exact_mut(h * w) {
                    pixelate(plane, h, w, level);
                }
            }
        }
        for v in img.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    out
}

/// Box-average down to `round(h * factor) x round(w * factor)`, then
/// nearest-neighbour back up.
fn pixelate(plane: &mut [f32], h: usize, w: usize, factor: f32) {
    let sh = ((h as f32 * factor).round() as usize).clamp(1, h);
    let sw = ((w as f32 * factor).round() as usize).clamp(1, w);
    let mut small = vec![0f32; sh * sw];
    for (i, cell) in small.iter_mut().enumerate() {
        let (cy, cx) = (i / sw, i % sw);
        let (y0, y1) = (cy * h / sh, ((cy + 1) * h / sh).max(cy * h / sh + 1));
        let (x0, x1) = (cx * w / sw, ((cx + 1) * w / sw).max(cx * w / sw + 1));
        let mut acc = 0f32;
        for y in y0..y1 {
            for x in x0..x1 {
                acc += plane[y * w + x];
            }
        }
        *cell = acc / ((y1 - y0) * (x1 - x0)) as f32;
    }
    for y in 0..h {
        for x in 0..w {
            plane[y * w + x] = small[(y * sh / h) * sw + x * sw / w];
        }
    }
}
