//! Sweeps over FGF kind, exponent range and number of polynomial terms.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::data::{evaluate, Dataset};
use crate::error::{Error, Result};
use crate::fgf::FgfKind;
use crate::model::{build, Arch, FgfTemplate};
use crate::train::{LossConfig, TrainConfig, Trainer};

/// Exponent ranges swept by the `beta` axis. (1, 7) is the default range.
pub const BETA_GRID: [(f32, f32); 6] = [(1.0, 3.0), (1.0, 5.0), (1.0, 7.0), (1.0, 9.0), (3.0, 7.0), (5.0, 9.0)];
pub const MAX_TERMS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationAxis {
    Fgf,
    Beta,
    Terms,
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fgf" => Ok(AblationAxis::Fgf),
            "beta" => Ok(AblationAxis::Beta),
            "terms" => Ok(AblationAxis::Terms),
            _ => Err(Error::Config(format!("unknown ablation axis {s:?} (fgf|beta|terms)"))),
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationAxis::Fgf => "fgf",
            AblationAxis::Beta => "beta",
            AblationAxis::Terms => "terms",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub label: String,
    pub template: FgfTemplate,
}

/// Variants along one axis; the other settings stay at `base`.
pub fn variants(axis: AblationAxis, base: FgfTemplate) -> Vec<Variant> {
    match axis {
        AblationAxis::Fgf => FgfKind::ALL
            .iter()
            .map(|&kind| Variant {
                label: kind.name().to_string(),
                template: FgfTemplate { kind, ..base },
            })
            .collect(),
        AblationAxis::Beta => BETA_GRID
            .iter()
            .map(|&(a, b)| Variant {
                label: format!("[{a},{b}]"),
                template: FgfTemplate {
                    beta_lower: a,
                    beta_upper: b,
                    ..base
                },
            })
            .collect(),
        AblationAxis::Terms => (1..=MAX_TERMS)
            .map(|terms| Variant {
                label: format!("terms={terms}"),
                template: FgfTemplate { terms, ..base },
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRecord {
    pub label: String,
    pub kind: String,
    pub beta_lower: f32,
    pub beta_upper: f32,
    pub terms: usize,
    pub seed: u64,
    pub epochs: usize,
    pub train_loss: f64,
    pub top1: f64,
}

/// Train a fresh mono-tiny with `template` and return its test top-1 and
/// final training loss (NaN when `config.epochs` is 0). `seed` drives the
/// exponents, the initialization and the sample order.
pub fn run_variant(
    template: &FgfTemplate,
    seed: u64,
    train: &Dataset,
    test: &Dataset,
    config: TrainConfig,
    loss: LossConfig,
) -> Result<(f64, f64)> {
    let desc = Arch::MonoTiny.descriptor(train.image_shape(), train.classes, template, seed);
    let mut state = build(&desc, seed)?;
    if config.epochs == 0 {
        return Ok((evaluate(&state, test, None)?, f64::NAN));
    }
    let config = TrainConfig { seed, ..config };
    let mut trainer = Trainer::new(&state, config, loss, train.len())?;
    let mut train_loss = f64::NAN;
    while !trainer.finished() {
        train_loss = trainer.train_epoch(&mut state, None, train)?.loss;
    }
    Ok((evaluate(&state, test, None)?, train_loss))
}

/// Every variant under every seed, reporting each record as it completes.
pub fn run_ablation(
    variants: &[Variant],
    seeds: &[u64],
    train: &Dataset,
    test: &Dataset,
    config: TrainConfig,
    loss: LossConfig,
    mut on_record: impl FnMut(&AblationRecord),
) -> Result<Vec<AblationRecord>> {
    let mut out = Vec::new();
    for v in variants {
        for &seed in seeds {
            let (top1, train_loss) = run_variant(&v.template, seed, train, test, config, loss)?;
            let rec = AblationRecord {
                label: v.label.clone(),
                kind: v.template.kind.name().to_string(),
                beta_lower: v.template.beta_lower,
                beta_upper: v.template.beta_upper,
                terms: v.template.terms,
                seed,
                epochs: config.epochs,
                train_loss,
                top1,
            };
            on_record(&rec);
            out.push(rec);
        }
    }
    Ok(out)
}

/// Mean top-1 per label, in first-appearance order.
pub fn mean_by_label(records: &[AblationRecord]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64, usize)> = Vec::new();
    for r in records {
        match out.iter_mut().find(|(l, _, _)| *l == r.label) {
            Some(e) => {
                e.1 += r.top1;
                e.2 += 1;
            }
            None => out.push((r.label.clone(), r.top1, 1)),
        }
    }
    out.into_iter().map(|(l, s, n)| (l, s / n as f64)).collect()
}
