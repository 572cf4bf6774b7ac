use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::ops::{soft_cross_entropy, softmax, softmax_cross_entropy};
use crate::tensor::{Real, Tensor};

/// Weights of the three-term objective plus weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Stagewise feature-matching term.
    pub w_mse: f32,
    /// Cross-entropy against the label.
    pub w_hard: f32,
    /// Cross-entropy against the teacher's softened distribution.
    pub w_distill: f32,
    pub temperature: f32,
    /// Coefficient of the squared L2 norm of the learnable parameters.
    pub l2: f32,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            w_mse: 1.0,
            w_hard: 1.0,
            w_distill: 1.0,
            temperature: 4.0,
            l2: 5e-4,
        }
    }
}

impl LossConfig {
    /// Plain cross-entropy training.
    pub fn hard_only() -> Self {
        Self {
            w_mse: 0.0,
            w_distill: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_mse, self.w_hard, self.w_distill, self.l2];
        if ws.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-sample values of each term, already multiplied by their weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub mse: f64,
    pub hard: f64,
    pub distill: f64,
    pub l2: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.mse + self.hard + self.distill + self.l2
    }

    pub fn add(&mut self, other: &LossTerms) {
        self.mse += other.mse;
        self.hard += other.hard;
        self.distill += other.distill;
        self.l2 += other.l2;
    }

    pub fn scale(&mut self, s: f64) {
        self.mse *= s;
        self.hard *= s;
        self.distill *= s;
        self.l2 *= s;
    }
}

pub struct TeacherView<'a, T> {
    pub logits: &'a [T],
    pub stages: &'a [Tensor<T>],
}

pub struct LossOutput<T> {
    pub terms: LossTerms,
    pub grad_logits: Vec<T>,
    /// Present when a teacher supplied stage targets and `w_mse > 0`.
    pub grad_stages: Option<Vec<Tensor<T>>>,
}

/// Output-side terms of the objective for one sample:
///
/// ```text
/// w_mse     * (1/S) sum_s mean((z_s^student - z_s^teacher)^2)
/// + w_hard    * CE(label, softmax(student))
/// + w_distill * T^2 * CE(softmax(teacher / T), softmax(student / T))
/// ```
///
/// Without a teacher the first and last terms vanish. The L2 penalty on
/// parameters is added by the optimizer.
pub fn combined_loss<T: Real>(
    student_logits: &[T],
    student_stages: &[Tensor<T>],
    teacher: Option<TeacherView<'_, T>>,
    label: usize,
    cfg: &LossConfig,
) -> Result<LossOutput<T>> {
    let mut terms = LossTerms::default();
    let mut grad = vec![T::zero(); student_logits.len()];

    if cfg.w_hard > 0.0 {
        let (ce, g) = softmax_cross_entropy(student_logits, label)?;
        let w = T::of(cfg.w_hard as f64);
        terms.hard = (w * ce).f64();
        for (a, b) in grad.iter_mut().zip(g) {
            *a += w * b;
        }
    } else if label >= student_logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: student_logits.len(),
        });
    }

    let mut grad_stages = None;
    if let Some(t) = teacher {
        if t.logits.len() != student_logits.len() {
            return shape_err("teacher and student logits differ in length");
        }
        if cfg.w_distill > 0.0 {
            let temp = T::of(cfg.temperature as f64);
            let w = T::of(cfg.w_distill as f64);
            let soft_t = softmax(&t.logits.iter().map(|&z| z / temp).collect::<Vec<_>>());
            let scaled: Vec<T> = student_logits.iter().map(|&z| z / temp).collect();
            let (ce, g) = soft_cross_entropy(&scaled, &soft_t);
            terms.distill = (w * temp * temp * ce).f64();
            // d/dz of T^2 * CE(z/T) is T * (softmax(z/T) - p)
            for (a, b) in grad.iter_mut().zip(g) {
                *a += w * temp * b;
            }
        }
        if cfg.w_mse > 0.0 {
            if t.stages.len() != student_stages.len() || t.stages.is_empty() {
                return shape_err("teacher and student stage counts differ");
            }
            let w = T::of(cfg.w_mse as f64);
            let inv_stages = T::one() / T::of(student_stages.len() as f64);
            let mut total = T::zero();
            let mut gs = Vec::with_capacity(student_stages.len());
            for (s, z) in student_stages.iter().zip(t.stages) {
                z.expect_shape(s.shape())?;
                let inv_n = T::one() / T::of(s.len() as f64);
                let mut g = Tensor::zeros(s.shape());
                let mut sq = T::zero();
                for ((gi, &a), &b) in g.data_mut().iter_mut().zip(s.data()).zip(z.data()) {
                    let d = a - b;
                    sq += d * d;
                    *gi = w * inv_stages * inv_n * T::of(2.0) * d;
                }
                total += sq * inv_n;
                gs.push(g);
            }
            terms.mse = (w * inv_stages * total).f64();
            grad_stages = Some(gs);
        }
    }

    Ok(LossOutput {
        terms,
        grad_logits: grad,
        grad_stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stage(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[1, v.len(), 1, 1], v.to_vec()).unwrap()
    }

    #[test]
    fn identical_teacher_leaves_only_entropy() {
        let logits = [0.3, -1.2, 2.0, 0.0];
        let stages = vec![stage(&[0.1, 0.2]), stage(&[1.0])];
        let cfg = LossConfig {
            w_hard: 0.0,
            ..LossConfig::default()
        };
        let out = combined_loss(
            &logits,
            &stages,
            Some(TeacherView { logits: &logits, stages: &stages }),
            1,
            &cfg,
        )
        .unwrap();
        assert_eq!(out.terms.mse, 0.0);
        assert!(out.grad_stages.unwrap().iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
        let t = cfg.temperature as f64;
        let p = softmax(&logits.iter().map(|z| z / t).collect::<Vec<_>>());
        let entropy: f64 = -p.iter().map(|q| q * q.ln()).sum::<f64>();
        assert!((out.terms.distill - t * t * entropy).abs() < 1e-12);
        assert!(out.grad_logits.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn without_auxiliary_terms_it_is_cross_entropy() {
        let logits = [0.5f32, 1.5, -0.5];
        let cfg = LossConfig {
            w_mse: 0.0,
            w_distill: 0.0,
            ..LossConfig::default()
        };
        let stages = vec![Tensor::from_vec(&[1, 1, 1, 1], vec![3.0f32]).unwrap()];
        let teacher = [9.0f32, 0.0, 0.0];
        let out = combined_loss(&logits, &stages, Some(TeacherView { logits: &teacher, stages: &stages }), 2, &cfg).unwrap();
        let (ce, g) = softmax_cross_entropy(&logits, 2).unwrap();
        assert_eq!(out.terms.total(), ce as f64);
        assert_eq!(out.grad_logits, g);
        assert!(out.grad_stages.is_none());
    }

    #[test]
    fn stage_shape_mismatch() {
        let cfg = LossConfig::default();
        let s = vec![stage(&[0.0, 1.0])];
        let t = vec![stage(&[0.0])];
        let r = combined_loss(&[0.0, 0.0], &s, Some(TeacherView { logits: &[0.0, 0.0], stages: &t }), 0, &cfg);
        assert!(r.is_err());
    }
}
