//! SGD with momentum and learning-rate schedules.

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, SkiError};
use crate::params::ParameterSet;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    Cosine,
}

impl FromStr for LrSchedule {
    type Err = SkiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(SkiError::arg("lr_schedule", format!("unknown schedule `{other}`"))),
        }
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        })
    }
}

/// Multiplier on the base learning rate at `progress` in [0, 1].
pub fn schedule_factor(schedule: LrSchedule, progress: f64) -> f64 {
    match schedule {
        LrSchedule::Constant => 1.0,
        LrSchedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * progress.clamp(0.0, 1.0)).cos()),
    }
}

/// Learning rate for `epoch` of `epochs`; progress is `epoch / epochs`.
pub fn epoch_lr(base: f64, schedule: LrSchedule, epoch: usize, epochs: usize) -> f64 {
    let progress = if epochs == 0 { 0.0 } else { epoch as f64 / epochs as f64 };
    base * schedule_factor(schedule, progress)
}

/// Momentum buffers for one [`ParameterSet`]; `v ← μv + g`, `w ← w − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f64,
    velocity: Vec<Option<Matrix>>,
}

impl Sgd {
    pub fn new(params: &ParameterSet, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(SkiError::arg("momentum", format!("{momentum} outside [0, 1)")));
        }
        Ok(Sgd {
            momentum,
            velocity: vec![None; params.len()],
        })
    }

    /// Applies one update; `None` gradients leave their array untouched.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &[Option<Matrix>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.velocity.len() != params.len() {
            return Err(SkiError::shape(
                "sgd_step",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        for (i, grad) in grads.iter().enumerate() {
            let Some(grad) = grad else { continue };
            let p = params.param_mut(i);
            if !p.trainable {
                return Err(SkiError::FrozenDrift(p.name.clone()));
            }
            if grad.shape() != p.value.shape() {
                return Err(SkiError::shape("sgd_step", format!("`{}` gradient {:?}", p.name, grad.shape())));
            }
            if !grad.is_finite() {
                return Err(SkiError::NonFiniteGradient(p.name.clone()));
            }
            let v = self.velocity[i].get_or_insert_with(|| Matrix::zeros(grad.rows(), grad.cols()));
            for (vv, &gv) in v.data_mut().iter_mut().zip(grad.data()) {
                *vv = self.momentum * *vv + gv;
            }
            for (w, &vv) in p.value.data_mut().iter_mut().zip(v.data()) {
                *w -= lr * vv;
            }
        }
        Ok(())
    }
}

/// Rescales every gradient so that their joint L2 norm is at most
/// `max_norm`; `max_norm` of 0 disables clipping. Returns the norm before
/// rescaling.
pub fn clip_global_norm(groups: &mut [&mut [Option<Matrix>]], max_norm: f64) -> f64 {
    let norm = groups
        .iter()
        .flat_map(|g| g.iter().flatten())
        .map(|m| m.data().iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for m in groups.iter_mut().flat_map(|g| g.iter_mut().flatten()) {
            m.scale_in_place(s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn single(w: f64) -> ParameterSet {
        let mut ps = ParameterSet::new();
        ps.add("w", Matrix::scalar(w), true).unwrap();
        ps
    }

    #[test]
    fn one_step_on_a_square() {
        let mut ps = single(1.0);
        let mut opt = Sgd::new(&ps, 0.9).unwrap();
        let grad = Matrix::scalar(2.0 * ps.param(0).value.item());
        opt.step(&mut ps, &[Some(grad)], 0.1).unwrap();
        assert!((ps.param(0).value.item() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn clipping_caps_the_joint_norm() {
        let mut a = vec![Some(Matrix::row_vector(&[3.0, 0.0])), None];
        let mut b = vec![Some(Matrix::scalar(4.0))];
        let norm = clip_global_norm(&mut [&mut a, &mut b], 1.0);
        assert!((norm - 5.0).abs() < 1e-15);
        let a0 = a[0].as_ref().unwrap();
        assert!((a0.data()[0] - 0.6).abs() < 1e-15 && (b[0].as_ref().unwrap().item() - 0.8).abs() < 1e-15);
        assert!((clip_global_norm(&mut [&mut a, &mut b], 0.0) - 1.0).abs() < 1e-12);
        assert!((clip_global_norm(&mut [&mut a, &mut b], 2.0) - 1.0).abs() < 1e-12);
        assert!((b[0].as_ref().unwrap().item() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(schedule_factor(LrSchedule::Cosine, 0.0), 1.0);
        assert!(schedule_factor(LrSchedule::Cosine, 1.0).abs() < 1e-15);
        assert!((schedule_factor(LrSchedule::Cosine, 0.5) - 0.5).abs() < 1e-15);
        assert_eq!(schedule_factor(LrSchedule::Constant, 0.7), 1.0);
        assert_eq!("cosine".parse::<LrSchedule>().unwrap(), LrSchedule::Cosine);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut ps = single(1.0);
        let mut opt = Sgd::new(&ps, 0.0).unwrap();
        let err = opt.step(&mut ps, &[Some(Matrix::scalar(f64::NAN))], 0.1).unwrap_err();
        assert!(err.to_string().contains('w'), "{err}");
        assert_eq!(ps.param(0).value.item(), 1.0);
    }

    #[test]
    fn converges_on_a_convex_quadratic() {
        // f(w) = ½ Σ a_i (w_i − c_i)², minimizer c
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 6;
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut ps = ParameterSet::new();
        ps.add("w", Matrix::zeros(1, n), true).unwrap();
        let mut opt = Sgd::new(&ps, 0.9).unwrap();
        let start: f64 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        for _ in 0..50 {
            let w = ps.param(0).value.data().to_vec();
            let g: Vec<f64> = (0..n).map(|i| a[i] * (w[i] - c[i])).collect();
            opt.step(&mut ps, &[Some(Matrix::row_vector(&g))], 0.1).unwrap();
        }
        let w = ps.param(0).value.data();
        let dist: f64 = (0..n).map(|i| (w[i] - c[i]).powi(2)).sum::<f64>().sqrt();
        assert!(dist < 0.05 * start, "distance {dist} from start {start}");
    }
}
