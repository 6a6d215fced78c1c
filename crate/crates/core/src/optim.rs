//! Parameter update rules and the two-phase optimizer schedule.
//!
//! Optimizers work on flat tensor lists (`&mut [&mut [T]]`) in the canonical
//! order of [`ModelParams::tensors_mut`](crate::nn::ModelParams::tensors_mut),
//! and are built by name through [`registry`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Real;
use crate::registry::Registry;

pub trait Optimizer<T: Real>: Send {
    fn name(&self) -> &'static str;

    /// Applies one update in place.
    fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]], lr: f64) -> Result<()>;
}

/// Hyperparameters shared by the registered optimizers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum: 0.9,
        }
    }
}

pub type OptimizerFactory<T> = fn(&OptimizerSettings, &[usize]) -> Result<Box<dyn Optimizer<T>>>;

pub const ADAM: &str = "adam";
pub const NESTEROV_SGD: &str = "nesterov_sgd";

pub fn registry<T: Real>() -> Registry<OptimizerFactory<T>> {
    let mut reg: Registry<OptimizerFactory<T>> = Registry::new("optimizer");
    reg.register(ADAM, |s, shapes| Ok(Box::new(Adam::new(s, shapes)?)))
        .register(NESTEROV_SGD, |s, shapes| Ok(Box::new(NesterovSgd::new(s.momentum, shapes)?)));
    reg
}

fn check_shapes<T>(state: &[Vec<T>], params: &[&mut [T]], grads: &[&[T]]) -> Result<()> {
    let ok = state.len() == params.len()
        && state.len() == grads.len()
        && state
            .iter()
            .zip(params.iter().zip(grads))
            .all(|(s, (p, g))| s.len() == p.len() && s.len() == g.len());
    if ok {
        Ok(())
    } else {
        Err(Error::ShapeMismatch("optimizer state, parameters and gradients differ".into()))
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(settings: &OptimizerSettings, shapes: &[usize]) -> Result<Self> {
        let valid = |b: f64| (0.0..1.0).contains(&b);
        if !valid(settings.beta1) || !valid(settings.beta2) || settings.eps <= 0.0 {
            return Err(Error::InvalidConfig("adam needs betas in [0, 1) and eps > 0".into()));
        }
        Ok(Self {
            beta1: settings.beta1,
            beta2: settings.beta2,
            eps: settings.eps,
            step: 0,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }
}

impl<T: Real> Optimizer<T> for Adam<T> {
    fn name(&self) -> &'static str {
        ADAM
    }

    fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]], lr: f64) -> Result<()> {
        check_shapes(&self.m, params, grads)?;
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let one = T::one();
        let correction1 = T::of(1.0 - self.beta1.powi(t));
        let correction2 = T::of(1.0 - self.beta2.powi(t));
        let lr = T::of(lr);
        let eps = T::of(self.eps);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((theta, &grad), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * grad;
                *v = b2 * *v + (one - b2) * grad * grad;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// SGD with Nesterov momentum in look-ahead form:
/// `v' = mu v - lr g`, `theta' = theta + mu v' - lr g`.
#[derive(Debug, Clone)]
pub struct NesterovSgd<T> {
    momentum: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> NesterovSgd<T> {
    pub fn new(momentum: f64, shapes: &[usize]) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        Ok(Self {
            momentum,
            velocity: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        })
    }

    pub fn velocity(&self) -> &[Vec<T>] {
        &self.velocity
    }
}

impl<T: Real> Optimizer<T> for NesterovSgd<T> {
    fn name(&self) -> &'static str {
        NESTEROV_SGD
    }

    fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]], lr: f64) -> Result<()> {
        check_shapes(&self.velocity, params, grads)?;
        let mu = T::of(self.momentum);
        let lr = T::of(lr);
        for ((p, g), vel) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((theta, &grad), v) in p.iter_mut().zip(g.iter()).zip(vel.iter_mut()) {
                *v = mu * *v - lr * grad;
                *theta += mu * *v - lr * grad;
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients<T: Real>(grads: &mut [&mut [T]], max_norm: f64) -> Result<f64> {
    let mut sum_sq = 0.0f64;
    for g in grads.iter() {
        for &v in g.iter() {
            if !v.is_finite() {
                return Err(Error::GradientOverflow);
            }
            let v = v.to_f64().unwrap_or(f64::NAN);
            sum_sq += v * v;
        }
    }
    let norm = sum_sq.sqrt();
    if !norm.is_finite() {
        return Err(Error::GradientOverflow);
    }
    if norm > max_norm {
        let scale = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(norm)
}

/// Adam for the first `adam_epochs`, then Nesterov SGD for `sgd_epochs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub adam_epochs: usize,
    pub sgd_epochs: usize,
    pub adam_lr: f64,
    pub sgd_lr: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            adam_epochs: 55,
            sgd_epochs: 20,
            adam_lr: 0.001,
            sgd_lr: 0.002,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochOptimizer {
    pub optimizer: &'static str,
    pub lr: f64,
}

impl Schedule {
    pub fn total_epochs(&self) -> usize {
        self.adam_epochs + self.sgd_epochs
    }

    /// Optimizer and learning rate for a 1-based epoch.
    pub fn optimizer_for_epoch(&self, epoch: usize) -> Result<EpochOptimizer> {
        let total = self.total_epochs();
        if epoch == 0 || epoch > total {
            return Err(Error::EpochOutOfRange { epoch, total });
        }
        Ok(if epoch <= self.adam_epochs {
            EpochOptimizer {
                optimizer: ADAM,
                lr: self.adam_lr,
            }
        } else {
            EpochOptimizer {
                optimizer: NESTEROV_SGD,
                lr: self.sgd_lr,
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.adam_lr > 0.0 && self.sgd_lr > 0.0) {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_step(opt: &mut dyn Optimizer<f64>, theta: &mut f64, g: f64, lr: f64) {
        let mut p = [*theta];
        {
            let mut params: Vec<&mut [f64]> = vec![&mut p];
            opt.step(&mut params, &[&[g]], lr).unwrap();
        }
        *theta = p[0];
    }

    #[test]
    fn adam_first_step_is_lr() {
        let mut opt = Adam::<f64>::new(&OptimizerSettings::default(), &[1]).unwrap();
        let mut theta = 0.0;
        scalar_step(&mut opt, &mut theta, 1.0, 0.001);
        assert!((theta + 0.001 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn adam_two_steps_match_recurrence() {
        // Recurrences evaluated outside this crate:
        // step 1 (g=1): theta=-0.0009999999900000003
        // step 2 (g=-1): theta=-0.000947368411578948, m=-0.01, v=0.001999
        let mut opt = Adam::<f64>::new(&OptimizerSettings::default(), &[1]).unwrap();
        let mut theta = 0.0;
        scalar_step(&mut opt, &mut theta, 1.0, 0.001);
        assert!((theta - -0.0009999999900000003).abs() < 1e-12);
        scalar_step(&mut opt, &mut theta, -1.0, 0.001);
        assert!((theta - -0.000947368411578948).abs() < 1e-12);
        let (m, v) = opt.moments();
        assert!((m[0][0] - -0.01).abs() < 1e-12);
        assert!((v[0][0] - 0.001999).abs() < 1e-12);
        assert_eq!(opt.steps_taken(), 2);
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut opt = Adam::<f64>::new(&OptimizerSettings::default(), &[3]).unwrap();
        let mut p = [0.3, -1.0, 2.0];
        let before = p;
        let mut params: Vec<&mut [f64]> = vec![&mut p];
        opt.step(&mut params, &[&[0.0, 0.0, 0.0]], 0.001).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn nesterov_matches_recurrence() {
        let mut opt = NesterovSgd::<f64>::new(0.9, &[1]).unwrap();
        let mut theta = 0.0;
        scalar_step(&mut opt, &mut theta, 1.0, 0.002);
        assert!((theta - -0.0038).abs() < 1e-12);
        scalar_step(&mut opt, &mut theta, 1.0, 0.002);
        assert!((theta - -0.00922).abs() < 1e-12);
        assert!((opt.velocity()[0][0] - -0.0038).abs() < 1e-12);
    }

    #[test]
    fn nesterov_without_momentum_is_sgd() {
        let mut opt = NesterovSgd::<f64>::new(0.0, &[1]).unwrap();
        let mut theta = 1.0;
        scalar_step(&mut opt, &mut theta, 2.0, 0.1);
        assert!((theta - 0.8).abs() < 1e-15);
        let mut opt = NesterovSgd::<f64>::new(0.9, &[1]).unwrap();
        scalar_step(&mut opt, &mut theta, 0.0, 0.1);
        assert!((theta - 0.8).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut opt = Adam::<f64>::new(&OptimizerSettings::default(), &[2]).unwrap();
        let mut p = [0.0; 3];
        let mut params: Vec<&mut [f64]> = vec![&mut p];
        assert!(matches!(
            opt.step(&mut params, &[&[0.0; 3]], 0.1),
            Err(Error::ShapeMismatch(_))
        ));
        let mut opt = NesterovSgd::<f64>::new(0.9, &[2, 1]).unwrap();
        assert!(opt.step(&mut params, &[&[0.0; 3]], 0.1).is_err());
    }

    #[test]
    fn registry_resolves_names() {
        let reg = registry::<f32>();
        assert_eq!(reg.names(), vec![ADAM, NESTEROV_SGD]);
        let opt = (reg.get(NESTEROV_SGD).unwrap())(&OptimizerSettings::default(), &[4]).unwrap();
        assert_eq!(opt.name(), NESTEROV_SGD);
        assert!(reg.get("rmsprop").is_err());
    }

    #[test]
    fn clipping_cases() {
        let mut a = [6.0, 8.0];
        let mut g: Vec<&mut [f64]> = vec![&mut a];
        assert_eq!(clip_gradients(&mut g, 5.0).unwrap(), 10.0);
        assert_eq!(a, [3.0, 4.0]);

        let mut a = [0.0, 3.0];
        let mut g: Vec<&mut [f64]> = vec![&mut a];
        clip_gradients(&mut g, 5.0).unwrap();
        assert_eq!(a, [0.0, 3.0]);

        let mut a = [0.0; 4];
        let mut g: Vec<&mut [f64]> = vec![&mut a];
        assert_eq!(clip_gradients(&mut g, 5.0).unwrap(), 0.0);

        let mut a = [1.0, f64::INFINITY];
        let mut g: Vec<&mut [f64]> = vec![&mut a];
        let err = clip_gradients(&mut g, 5.0).unwrap_err();
        assert_eq!(err.to_string(), "gradient overflow");
    }

    #[test]
    fn default_schedule_boundaries() {
        let s = Schedule::default();
        assert_eq!(s.total_epochs(), 75);
        assert_eq!(s.optimizer_for_epoch(1).unwrap(), EpochOptimizer { optimizer: ADAM, lr: 0.001 });
        assert_eq!(s.optimizer_for_epoch(55).unwrap(), EpochOptimizer { optimizer: ADAM, lr: 0.001 });
        assert_eq!(
            s.optimizer_for_epoch(56).unwrap(),
            EpochOptimizer { optimizer: NESTEROV_SGD, lr: 0.002 }
        );
        assert!(s.optimizer_for_epoch(0).is_err());
        assert!(s.optimizer_for_epoch(76).is_err());
    }

    proptest! {
        #[test]
        fn clipping_preserves_direction(v in prop::collection::vec(-100.0f64..100.0, 1..50), max_norm in 0.1f64..50.0) {
            let before = v.clone();
            let mut after = v;
            let norm = {
                let mut g: Vec<&mut [f64]> = vec![&mut after];
                clip_gradients(&mut g, max_norm).unwrap()
            };
            let new_norm = after.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(new_norm <= norm + 1e-9);
            prop_assert!(new_norm <= max_norm.max(norm) + 1e-9);
            if norm > 0.0 {
                let dot: f64 = before.iter().zip(&after).map(|(a, b)| a * b).sum();
                prop_assert!((dot / (norm * new_norm) - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn single_switch_point(adam in 0usize..30, sgd in 0usize..30) {
            let s = Schedule { adam_epochs: adam, sgd_epochs: sgd, ..Schedule::default() };
            let names: Vec<_> = (1..=s.total_epochs()).map(|e| s.optimizer_for_epoch(e).unwrap().optimizer).collect();
            let switches = names.windows(2).filter(|w| w[0] != w[1]).count();
            prop_assert!(switches <= 1);
            prop_assert_eq!(names.iter().filter(|n| **n == ADAM).count(), adam);
        }

        #[test]
        fn steps_stay_finite(g in prop::collection::vec(-1e3f64..1e3, 1..20), steps in 1usize..20) {
            let n = g.len();
            let mut adam = Adam::<f64>::new(&OptimizerSettings::default(), &[n]).unwrap();
            let mut nest = NesterovSgd::<f64>::new(0.9, &[n]).unwrap();
            let mut p1 = vec![0.0; n];
            let mut p2 = vec![0.0; n];
            for _ in 0..steps {
                let mut a: Vec<&mut [f64]> = vec![&mut p1];
                adam.step(&mut a, &[&g], 0.001).unwrap();
                let mut b: Vec<&mut [f64]> = vec![&mut p2];
                nest.step(&mut b, &[&g], 0.002).unwrap();
            }
            prop_assert!(p1.iter().chain(&p2).all(|x| x.is_finite()));
            let (_, v) = adam.moments();
            prop_assert!(v[0].iter().all(|x| *x >= 0.0));
        }
    }
}
