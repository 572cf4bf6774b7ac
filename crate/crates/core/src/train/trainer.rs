use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{argmax, Dataset};
use crate::error::{shape_err, Error, Result};
use crate::model::{LayerGrad, ModelState};
use crate::rng::{derive_seed, Xoshiro256StarStar};
use crate::tensor::Tensor;
use crate::train::loss::{combined_loss, LossConfig, LossTerms, TeacherView};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Initial learning rate, annealed to zero on a cosine schedule.
    pub lr0: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f32,
    /// Drives shuffling and augmentation.
    pub seed: u64,
    /// Pad-4 random crop plus horizontal flip.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.05,
            epochs: 3,
            batch_size: 32,
            momentum: 0.9,
            seed: 0,
            augment: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 >= 0.0) || !self.lr0.is_finite() {
            return Err(Error::Config(format!("lr0 must be finite and >= 0, got {}", self.lr0)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

/// `lr0 * (1 + cos(pi * step / total)) / 2`, zero from `total` on.
pub fn cosine_lr(lr0: f32, step: usize, total: usize) -> f32 {
    if total == 0 || step >= total {
        return 0.0;
    }
    (lr0 as f64 * 0.5 * (1.0 + (PI * step as f64 / total as f64).cos())) as f32
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean objective over the epoch, weight decay included.
    pub loss: f64,
    /// Training top-1 measured on the fly.
    pub top1: f64,
    /// Learning rate of the last step.
    pub lr: f32,
    pub terms: LossTerms,
    pub first_batch_loss: f64,
    pub last_batch_loss: f64,
    pub steps: usize,
}

/// SGD with momentum over the learnable tensors of a model. The optimizer
/// state is separate from the model so it can be checkpointed.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub loss: LossConfig,
    pub velocity: Vec<Tensor<f32>>,
    pub step: usize,
    pub epoch: usize,
    pub total_steps: usize,
}

impl Trainer {
    /// `samples` is the training-set size, used to lay out the schedule.
    pub fn new(student: &ModelState, config: TrainConfig, loss: LossConfig, samples: usize) -> Result<Self> {
        config.validate()?;
        loss.validate()?;
        if samples == 0 {
            return Err(Error::Config("empty training set".into()));
        }
        let velocity = student.learnables().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Ok(Self {
            config,
            loss,
            velocity,
            step: 0,
            epoch: 0,
            total_steps: config.epochs * samples.div_ceil(config.batch_size),
        })
    }

    pub fn lr(&self) -> f32 {
        cosine_lr(self.config.lr0, self.step, self.total_steps)
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// One pass over `data` in a seeded order. Samples of a batch are
    /// processed in parallel; their gradients are summed in sample order so
    /// results do not depend on the thread count.
    pub fn train_epoch(
        &mut self,
        student: &mut ModelState,
        teacher: Option<&ModelState>,
        data: &Dataset,
    ) -> Result<EpochMetrics> {
        if data.is_empty() {
            return Err(Error::Config("empty training set".into()));
        }
        if data.image_shape() != student.descriptor.input_shape {
            return shape_err(format!(
                "data images {:?} do not fit model input {:?}",
                data.image_shape(),
                student.descriptor.input_shape
            ));
        }
        if let Some(t) = teacher {
            if t.descriptor.stage_shapes()? != student.descriptor.stage_shapes()?
                || t.descriptor.input_shape != student.descriptor.input_shape
            {
                return shape_err("teacher and student stages do not align");
            }
        }
        if self.velocity.len() != student.learnables().len() {
            return shape_err("optimizer state does not match the model");
        }

        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = Xoshiro256StarStar::seed_from_u64(derive_seed(self.config.seed, self.epoch as u64));
        rng.shuffle(&mut order);

        let mut sum = LossTerms::default();
        let mut correct = 0usize;
        let mut first = None;
        let mut last = 0.0;
        let mut steps = 0;
        let mut lr = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            let mut images = data.select(batch).images;
            if self.config.augment {
                crop_flip(&mut images, 4, &mut rng);
            }
            let images = data.stats.apply(&images);
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i] as usize).collect();

            let (terms, hits) = self.step(student, teacher, &images, &labels, &mut lr)?;
            let batch_loss = terms.total() / labels.len() as f64;
            first.get_or_insert(batch_loss);
            last = batch_loss;
            sum.add(&terms);
            correct += hits;
            steps += 1;
        }
        self.epoch += 1;
        sum.scale(1.0 / data.len() as f64);
        Ok(EpochMetrics {
            epoch: self.epoch,
            loss: sum.total(),
            top1: correct as f64 / data.len() as f64,
            lr,
            terms: sum,
            first_batch_loss: first.unwrap_or(0.0),
            last_batch_loss: last,
            steps,
        })
    }

    /// Gradient step on one standardized batch. Returns the summed loss
    /// terms and the number of correct predictions.
    fn step(
        &mut self,
        student: &mut ModelState,
        teacher: Option<&ModelState>,
        images: &Tensor<f32>,
        labels: &[usize],
        lr_out: &mut f32,
    ) -> Result<(LossTerms, usize)> {
        let shape = {
            let mut s = images.shape().to_vec();
            s[0] = 1;
            s
        };
        let boundaries = &student.descriptor.stage_boundaries;
        let loss_cfg = self.loss;
        let frozen: &ModelState = student;
        let per_sample: Vec<Result<(LossTerms, bool, Vec<LayerGrad<f32>>)>> = (0..labels.len())
            .into_par_iter()
            .map(|i| {
                let x = Tensor::from_vec(&shape, images.outer(i).to_vec())?;
                let trace = frozen.forward_trace(&x)?;
                let stages = trace.stage_features(boundaries);
                let teacher_out = match teacher {
                    Some(t) => Some(t.forward(&x, loss_cfg.w_mse > 0.0)?),
                    None => None,
                };
                let view = teacher_out.as_ref().map(|(logits, st)| TeacherView {
                    logits: logits.data(),
                    stages: st.as_deref().unwrap_or(&[]),
                });
                let out = combined_loss(trace.logits.data(), &stages, view, labels[i], &loss_cfg)?;
                let hit = argmax(trace.logits.data()) == labels[i];
                let grad_logits = Tensor::from_vec(trace.logits.shape(), out.grad_logits)?;
                let grads = frozen.backward(&trace, &grad_logits, out.grad_stages.as_deref())?;
                Ok((out.terms, hit, grads))
            })
            .collect();

        let mut terms = LossTerms::default();
        let mut hits = 0;
        let mut total: Option<Vec<LayerGrad<f32>>> = None;
        for r in per_sample {
            let (t, hit, g) = r?;
            terms.add(&t);
            hits += hit as usize;
            match total.as_mut() {
                None => total = Some(g),
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        a.accumulate(b)?;
                    }
                }
            }
        }
        let grads = student.reduce_grads(&total.unwrap_or_default())?;

        let n = labels.len() as f32;
        let l2 = self.loss.l2;
        let lr = self.lr();
        *lr_out = lr;
        let mu = self.config.momentum;
        let mut decay = 0f64;
        for p in student.learnables() {
            decay += p.sum_sq() as f64;
        }
        terms.l2 = l2 as f64 * decay * labels.len() as f64;

        let velocity = &mut self.velocity;
        student.update_learnables(|idx, p| {
            let g = grads[idx].data();
            let v = velocity[idx].data_mut();
            for ((w, vi), &gi) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                let grad = gi / n + 2.0 * l2 * *w;
                *vi = mu * *vi + grad;
                *w -= lr * *vi;
            }
        })?;
        self.step += 1;
        Ok((terms, hits))
    }
}

/// Zero-pad by `pad`, crop back to the original size at a random offset and
/// flip horizontally with probability 1/2, independently per image.
pub fn crop_flip(images: &mut Tensor<f32>, pad: usize, rng: &mut Xoshiro256StarStar) {
    let (n, c, h, w) = (images.dim(0), images.dim(1), images.dim(2), images.dim(3));
    let mut buf = vec![0f32; c * h * w];
    for i in 0..n {
        let dy = rng.below(2 * pad + 1) as isize - pad as isize;
        let dx = rng.below(2 * pad + 1) as isize - pad as isize;
        let flip = rng.below(2) == 1;
        let img = images.outer_mut(i);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let sx = if flip { w - 1 - x } else { x };
                    let (yy, xx) = (y as isize + dy, sx as isize + dx);
                    buf[(ch * h + y) * w + x] = if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                        img[(ch * h + yy as usize) * w + xx as usize]
                    } else {
                        0.0
                    };
                }
            }
        }
        img.copy_from_slice(&buf);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0.1, 0, 100), 0.1);
        assert!(cosine_lr(0.1, 100, 100) < 1e-8);
        assert!((cosine_lr(0.1, 50, 100) - 0.05).abs() < 1e-7);
    }

    #[test]
    fn rejects_bad_config() {
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            momentum: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn crop_flip_without_shift_only_flips() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(3);
        let img = Tensor::from_vec(&[1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        for _ in 0..20 {
            let mut t = img.clone();
            crop_flip(&mut t, 0, &mut rng);
            let flipped = [3.0, 2.0, 1.0, 6.0, 5.0, 4.0];
            assert!(t.data() == img.data() || t.data() == flipped);
        }
    }
}
