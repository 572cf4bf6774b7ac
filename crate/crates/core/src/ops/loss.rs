use crate::error::{Error, Result};
use crate::tensor::Real;

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
    logits.iter().map(|&z| z - lse).collect()
}

/// Cross-entropy of one sample against an integer label; returns the loss
/// and its gradient with respect to the logits.
pub fn softmax_cross_entropy<T: Real>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let logp = log_softmax(logits);
    let mut grad = softmax(logits);
    grad[label] -= T::one();
    Ok((-logp[label], grad))
}

/// Cross-entropy `-sum_j target_j log softmax(logits)_j` against a soft
/// target distribution; gradient is `softmax(logits) - target`.
pub fn soft_cross_entropy<T: Real>(logits: &[T], target: &[T]) -> (T, Vec<T>) {
    let logp = log_softmax(logits);
    let loss = -target.iter().zip(&logp).map(|(&t, &l)| t * l).sum::<T>();
    let grad = softmax(logits)
        .into_iter()
        .zip(target)
        .map(|(p, &t)| p - t)
        .collect();
    (loss, grad)
}
