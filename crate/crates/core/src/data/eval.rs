use rayon::prelude::*;
use serde::Serialize;

use crate::data::corrupt::{corrupt_at, CorruptionGroup, CorruptionKind, CorruptionSpec};
use crate::data::Dataset;
use crate::error::{shape_err, Result};
use crate::model::ModelState;

const EVAL_CHUNK: usize = 250;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Predicted class per sample, optionally under a corruption.
pub fn predict(state: &ModelState, dataset: &Dataset, corruption: Option<&CorruptionSpec>) -> Result<Vec<usize>> {
    if dataset.image_shape() != state.descriptor.input_shape {
        return shape_err(format!(
            "dataset images {:?} do not match model input {:?}",
            dataset.image_shape(),
            state.descriptor.input_shape
        ));
    }
    let starts: Vec<usize> = (0..dataset.len()).step_by(EVAL_CHUNK).collect();
    let chunks: Result<Vec<Vec<usize>>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + EVAL_CHUNK).min(dataset.len());
            let mut raw = dataset.images.rows(start, end);
            if let Some(spec) = corruption {
                raw = corrupt_at(&raw, spec, start);
            }
            let (logits, _) = state.forward(&dataset.stats.apply(&raw), false)?;
            let classes = logits.dim(1);
            Ok(logits.data().chunks_exact(classes).map(argmax).collect())
        })
        .collect();
    Ok(chunks?.into_iter().flatten().collect())
}

/// Top-1 accuracy.
pub fn evaluate(state: &ModelState, dataset: &Dataset, corruption: Option<&CorruptionSpec>) -> Result<f64> {
    if dataset.is_empty() {
        return Ok(0.0);
    }
    let preds = predict(state, dataset, corruption)?;
    let correct = preds
        .iter()
        .zip(&dataset.labels)
        .filter(|(&p, &l)| p == l as usize)
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RobustnessRow {
    pub kind: CorruptionKind,
    pub group: CorruptionGroup,
    /// Top-1 at severities 1..=5.
    pub by_severity: [f64; 5],
    pub mean: f64,
}

/// Accuracy for every corruption kind at every severity.
pub fn robustness_table(state: &ModelState, dataset: &Dataset, seed: u64) -> Result<Vec<RobustnessRow>> {
    let mut rows = Vec::new();
    for kind in CorruptionKind::ALL {
        let mut by_severity = [0.0; 5];
        for (s, slot) in by_severity.iter_mut().enumerate() {
            let spec = CorruptionSpec::new(kind, s as u8 + 1, seed)?;
            *slot = evaluate(state, dataset, Some(&spec))?;
        }
        rows.push(RobustnessRow {
            kind,
            group: kind.group(),
            by_severity,
            mean: by_severity.iter().sum::<f64>() / 5.0,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0; 10]), 0);
    }
}
