//! End-to-end gradient check against central differences.
//!
//! The model is cast to f64 so that finite differences with `epsilon = 1e-3`
//! resolve gradients well below the tolerances. ReLU and max-pool choices
//! are held at their values for the unperturbed input while differencing,
//! so a step that crosses a switch measures the same branch the analytic
//! gradient follows; such probes are counted in the report.

use serde::Serialize;

use crate::error::{shape_err, Result};
use crate::fgf::{apply_fgf, fgf_derivative, FgfKind};
use crate::model::{LayerParams, ModelState, Trace};
use crate::rng::Xoshiro256StarStar;
use crate::tensor::Tensor;
use crate::train::loss::{combined_loss, LossConfig, LossOutput, TeacherView};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub seed_tolerance: f64,
    pub dense_tolerance: f64,
    /// Coordinates probed per tensor; smaller tensors are probed fully.
    pub max_probes: usize,
    /// Relative errors are taken against `max(|analytic|, |numeric|, floor)`
    /// where `floor` is this fraction of the tensor's largest analytic
    /// gradient, so near-zero components are judged on absolute error.
    pub floor_fraction: f64,
    pub seed: u64,
    /// Rescale each monomial seed filter to unit RMS before checking. The
    /// generated bank does not depend on that scale, so the model function
    /// is unchanged, but a fixed step is then small next to every seed entry.
    pub unit_seed_scale: bool,
    pub loss: LossConfig,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            seed_tolerance: 1e-2,
            dense_tolerance: 1e-3,
            max_probes: 512,
            floor_fraction: 1e-2,
            seed: 0,
            unit_seed_scale: true,
            loss: LossConfig {
                l2: 0.0,
                ..LossConfig::hard_only()
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ParamGroup {
    Seed,
    Conv,
    Dense,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorCheck {
    pub layer: usize,
    pub group: ParamGroup,
    pub name: String,
    pub probes: usize,
    /// Probes whose step would have flipped a ReLU or max-pool choice.
    /// Differences are always taken with those choices held at the base
    /// point, so these probes are still compared.
    pub kinks: usize,
    /// Monomial seed probes skipped because the step comes within `epsilon`
    /// of zero, where `|w|^beta` is not twice differentiable.
    pub near_zero: usize,
    pub max_rel_error: f64,
    /// Coordinate, analytic and numeric value of the worst probe.
    pub worst: Option<(usize, f64, f64)>,
    /// Largest analytic gradient magnitude in the tensor.
    pub max_abs_grad: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub loss: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn max_error(&self, group: ParamGroup) -> f64 {
        self.tensors
            .iter()
            .filter(|t| t.group == group)
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }
}

pub fn grad_check(
    state: &ModelState,
    teacher: Option<&ModelState>,
    input: &Tensor<f32>,
    labels: &[usize],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    grad_check_with(state, teacher, input, labels, cfg, fgf_derivative)
}

/// [`grad_check`] with the FGF derivative used by the analytic pass
/// replaced, so a broken derivative can be shown to fail.
pub fn grad_check_with(
    state: &ModelState,
    teacher: Option<&ModelState>,
    input: &Tensor<f32>,
    labels: &[usize],
    cfg: &GradCheckConfig,
    derivative: fn(f64, f64, FgfKind) -> f64,
) -> Result<GradCheckReport> {
    if input.rank() != 4 || input.dim(0) != labels.len() || labels.is_empty() {
        return shape_err("grad check needs one label per input sample");
    }
    let mut model: ModelState<f64> = state.cast();
    if cfg.unit_seed_scale {
        rescale_monomial_seeds(&mut model)?;
    }
    let teacher: Option<ModelState<f64>> = teacher.map(|t| t.cast());
    let x: Tensor<f64> = input.cast();

    let teacher_out = match &teacher {
        Some(t) => Some(t.forward(&x, true)?),
        None => None,
    };
    let base = model.forward_trace(&x)?;
    let loss = objective(&model, teacher_out.as_ref(), &x, labels, &cfg.loss, None)?.0;
    let analytic = gradient(&model, teacher_out.as_ref(), &x, labels, &cfg.loss, derivative)?;

    let mut owners = Vec::new();
    for (layer, p) in model.layers.iter().enumerate() {
        match p {
            LayerParams::Mono(_) => owners.push((layer, ParamGroup::Seed, "seed")),
            LayerParams::Conv(_) => owners.push((layer, ParamGroup::Conv, "weights")),
            LayerParams::Dense { .. } => {
                owners.push((layer, ParamGroup::Dense, "weights"));
                owners.push((layer, ParamGroup::Dense, "bias"));
            }
            LayerParams::None => {}
        }
    }

    let mut rng = Xoshiro256StarStar::seed_from_u64(cfg.seed);
    let mut tensors = Vec::new();
    for (idx, &(layer, group, name)) in owners.iter().enumerate() {
        let len = analytic[idx].len();
        let mut coords: Vec<usize> = (0..len).collect();
        if len > cfg.max_probes {
            rng.shuffle(&mut coords);
            coords.truncate(cfg.max_probes);
        }
        let max_abs_grad = analytic[idx].data().iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        let floor = (cfg.floor_fraction * max_abs_grad).max(f64::MIN_POSITIVE);
        let mut worst = 0f64;
        let mut worst_at = None;
        let mut kinks = 0;
        let mut near_zero = 0;
        let monomial_seed = matches!(&model.layers[layer], LayerParams::Mono(b) if b.config.kind == FgfKind::Monomial);
        for &j in &coords {
            if monomial_seed && model.learnables()[idx].data()[j].abs() < 2.0 * cfg.epsilon {
                near_zero += 1;
                continue;
            }
            let eval = |delta: f64| -> Result<(f64, bool)> {
                let mut probe = model.clone();
                probe.update_learnables(|k, t| {
                    if k == idx {
                        t.data_mut()[j] += delta;
                    }
                })?;
                objective(&probe, teacher_out.as_ref(), &x, labels, &cfg.loss, Some(&base))
            };
            let ((plus, crossed_plus), (minus, crossed_minus)) = (eval(cfg.epsilon)?, eval(-cfg.epsilon)?);
            kinks += (crossed_plus || crossed_minus) as usize;
            let numeric = (plus - minus) / (2.0 * cfg.epsilon);
            let a = analytic[idx].data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if err > worst || worst_at.is_none() {
                worst = err;
                worst_at = Some((j, a, numeric));
            }
        }
        let tolerance = match group {
            ParamGroup::Dense => cfg.dense_tolerance,
            _ => cfg.seed_tolerance,
        };
        tensors.push(TensorCheck {
            layer,
            group,
            name: format!("layer{layer}.{name}"),
            probes: coords.len(),
            kinks,
            near_zero,
            max_rel_error: worst,
            worst: worst_at,
            max_abs_grad,
            tolerance,
            pass: worst < tolerance && near_zero < coords.len(),
        });
    }
    let pass = tensors.iter().all(|t| t.pass);
    Ok(GradCheckReport { tensors, loss, pass })
}

/// Worst agreement between one FGF's analytic derivative and central
/// differences over a fixed grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FgfDerivativeCheck {
    pub kind: FgfKind,
    pub points: usize,
    pub max_rel_error: f64,
    /// `(w, beta, analytic, numeric)` at the worst point.
    pub worst: (f64, f64, f64, f64),
}

/// Derivatives of every FGF on a grid of `|w|` log-spaced over [1e-3, 2]
/// (both signs) and `beta` over [1, 7]. Steps follow each function's local
/// length scale: relative to `|w|` for the monomial, relative to `1/beta`
/// for the radial kinds.
pub fn check_fgf_derivatives() -> Vec<FgfDerivativeCheck> {
    const MAGS: usize = 25;
    const BETAS: usize = 13;
    FgfKind::ALL
        .iter()
        .map(|&kind| {
            let mut out = FgfDerivativeCheck {
                kind,
                points: 0,
                max_rel_error: 0.0,
                worst: (0.0, 0.0, 0.0, 0.0),
            };
            for i in 0..MAGS {
                let mag = 1e-3 * 2000f64.powf(i as f64 / (MAGS - 1) as f64);
                for j in 0..BETAS {
                    let beta = 1.0 + 6.0 * j as f64 / (BETAS - 1) as f64;
                    for w in [mag, -mag] {
                        let h = match kind {
                            FgfKind::Monomial => 1e-4 * mag,
                            _ => 1e-6 * (1.0 / beta).min(1.0),
                        };
                        let numeric = (apply_fgf(w + h, beta, kind) - apply_fgf(w - h, beta, kind)) / (2.0 * h);
                        let analytic = fgf_derivative(w, beta, kind);
                        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
                        if err > out.max_rel_error || out.points == 0 {
                            out.max_rel_error = err;
                            out.worst = (w, beta, analytic, numeric);
                        }
                        out.points += 1;
                    }
                }
            }
            out
        })
        .collect()
}

fn rescale_monomial_seeds(model: &mut ModelState<f64>) -> Result<()> {
    for p in &mut model.layers {
        if let LayerParams::Mono(bank) = p {
            let rms = (bank.seed_filter.sum_sq() / bank.seed_filter.len() as f64).sqrt();
            if bank.config.kind == FgfKind::Monomial && rms > 0.0 {
                let seed = bank.seed_filter.scale(1.0 / rms);
                bank.regenerate(&seed)?;
            }
        }
    }
    Ok(())
}

type TeacherOut = (Tensor<f64>, Option<Vec<Tensor<f64>>>);

/// Per-sample loss outputs for a recorded forward pass.
fn per_sample(
    model: &ModelState<f64>,
    trace: &Trace<f64>,
    teacher: Option<&TeacherOut>,
    labels: &[usize],
    loss: &LossConfig,
) -> Result<Vec<LossOutput<f64>>> {
    let stages = trace.stage_features(&model.descriptor.stage_boundaries);
    labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let sample_stages: Vec<Tensor<f64>> = stages.iter().map(|s| sample_of(s, i)).collect();
            let teacher_stages: Vec<Tensor<f64>> = teacher
                .and_then(|(_, st)| st.as_ref())
                .map(|st| st.iter().map(|s| sample_of(s, i)).collect())
                .unwrap_or_default();
            let view = teacher.map(|(logits, _)| TeacherView {
                logits: logits.outer(i),
                stages: &teacher_stages,
            });
            combined_loss(trace.logits.outer(i), &sample_stages, view, label, loss)
        })
        .collect()
}

/// Mean objective over the batch, weight decay included. With `pattern`,
/// the ReLU and max-pool choices of that trace are held fixed and the flag
/// reports whether they would have switched.
fn objective(
    model: &ModelState<f64>,
    teacher: Option<&TeacherOut>,
    x: &Tensor<f64>,
    labels: &[usize],
    loss: &LossConfig,
    pattern: Option<&Trace<f64>>,
) -> Result<(f64, bool)> {
    let (trace, switched) = match pattern {
        Some(p) => model.forward_frozen(x, p)?,
        None => (model.forward_trace(x)?, false),
    };
    let outs = per_sample(model, &trace, teacher, labels, loss)?;
    let mut total = outs.iter().map(|o| o.terms.total()).sum::<f64>() / labels.len() as f64;
    let l2 = loss.l2 as f64;
    if l2 > 0.0 {
        total += l2 * model.learnables().iter().map(|p| p.sum_sq()).sum::<f64>();
    }
    Ok((total, switched))
}

/// Analytic gradient of [`objective`] on the learnables.
fn gradient(
    model: &ModelState<f64>,
    teacher: Option<&TeacherOut>,
    x: &Tensor<f64>,
    labels: &[usize],
    loss: &LossConfig,
    derivative: fn(f64, f64, FgfKind) -> f64,
) -> Result<Vec<Tensor<f64>>> {
    let trace = model.forward_trace(x)?;
    let outs = per_sample(model, &trace, teacher, labels, loss)?;
    let inv_n = 1.0 / labels.len() as f64;
    let mut grad_logits = Tensor::zeros(trace.logits.shape());
    let mut stage_grads: Vec<Tensor<f64>> = trace
        .stage_features(&model.descriptor.stage_boundaries)
        .iter()
        .map(|s| Tensor::zeros(s.shape()))
        .collect();
    for (i, out) in outs.into_iter().enumerate() {
        for (g, v) in grad_logits.outer_mut(i).iter_mut().zip(&out.grad_logits) {
            *g = v * inv_n;
        }
        if let Some(gs) = out.grad_stages {
            for (acc, g) in stage_grads.iter_mut().zip(gs) {
                for (a, v) in acc.outer_mut(i).iter_mut().zip(g.data()) {
                    *a = v * inv_n;
                }
            }
        }
    }
    let grads = model.backward(&trace, &grad_logits, Some(&stage_grads))?;
    let mut learn = model.reduce_grads_with(&grads, derivative)?;
    let l2 = loss.l2 as f64;
    if l2 > 0.0 {
        for (g, p) in learn.iter_mut().zip(model.learnables()) {
            g.axpy(2.0 * l2, p)?;
        }
    }
    Ok(learn)
}

fn sample_of(t: &Tensor<f64>, i: usize) -> Tensor<f64> {
    let mut shape = t.shape().to_vec();
    shape[0] = 1;
    Tensor::from_vec(&shape, t.outer(i).to_vec()).expect("sample slice")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::arch::{mono_tiny, FgfTemplate};
    use crate::model::build;

    fn setup() -> (ModelState, Tensor<f32>) {
        let d = mono_tiny([1, 8, 8], 4, &FgfTemplate::default(), 5);
        let mut s = build(&d, 2).unwrap();
        s.init_head(9);
        let mut rng = Xoshiro256StarStar::seed_from_u64(1);
        let x = Tensor::from_vec(&[2, 1, 8, 8], (0..128).map(|_| rng.normal() as f32).collect()).unwrap();
        (s, x)
    }

    #[test]
    fn small_model_passes() {
        let (s, x) = setup();
        let r = grad_check(&s, None, &x, &[1, 3], &GradCheckConfig::default()).unwrap();
        assert!(r.pass, "{r:#?}");
    }

    #[test]
    fn broken_derivative_fails() {
        let (s, x) = setup();
        fn wrong(w: f64, beta: f64, kind: FgfKind) -> f64 {
            2.0 * fgf_derivative(w, beta, kind) + 0.3
        }
        let r = grad_check_with(&s, None, &x, &[1, 3], &GradCheckConfig::default(), wrong).unwrap();
        assert!(!r.pass);
        assert!(r.max_error(ParamGroup::Seed) > 1e-2);
        assert!(r.max_error(ParamGroup::Dense) < 1e-3);
    }

    #[test]
    fn fgf_sweep_covers_every_kind() {
        let checks = check_fgf_derivatives();
        assert_eq!(checks.len(), 5);
        for c in &checks {
            assert_eq!(c.points, 25 * 13 * 2);
            assert!(c.max_rel_error < 1e-4, "{c:?}");
        }
    }
}
