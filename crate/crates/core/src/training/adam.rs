use serde::{Deserialize, Serialize};

use crate::network::Param;
use crate::tensor::Real;

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 5e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments for every parameter, in parameter order.
/// Frozen parameters keep zero moments and are never touched.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &[Param<T>]) -> Self {
        let zeros = || params.iter().map(|p| vec![T::zero(); p.data.len()]).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    /// One update. A missing gradient for a trainable parameter counts as zero.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [Param<T>], grads: &[Option<Vec<T>>]) -> Result<(), TrainError> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(TrainError::Invalid(format!(
                "optimizer tracks {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if let Some(g) = g {
                if g.len() != p.data.len() {
                    return Err(TrainError::Invalid(format!("gradient length mismatch for {}", p.name)));
                }
                if p.is_trainable() && g.iter().any(|v| !v.is_finite()) {
                    return Err(TrainError::NonFiniteGradient { param: p.name.clone() });
                }
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let cast = T::from_f64_lossy;
        let (b1, b2) = (cast(c.beta1), cast(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        let (lr, eps) = (cast(c.lr), cast(c.eps));
        for (i, p) in params.iter_mut().enumerate() {
            if !p.is_trainable() {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.data.len() {
                let g = grads[i].as_ref().map_or(T::zero(), |g| g[j]);
                m[j] = b1 * m[j] + one_b1 * g;
                v[j] = b2 * v[j] + one_b2 * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p.data[j] = p.data[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ParamRole;

    fn param(data: Vec<f64>, role: ParamRole) -> Param<f64> {
        Param { name: "w".into(), shape: vec![data.len()], data, role }
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient() {
        let mut ps = vec![param(vec![1.0, -2.0, 0.5], ParamRole::Trainable)];
        let mut opt = Adam::new(AdamConfig::default(), &ps);
        opt.step(&mut ps, &[Some(vec![3.0, -0.2, 0.0])]).unwrap();
        assert!((ps[0].data[0] - (1.0 - 5e-5)).abs() < 1e-10);
        assert!((ps[0].data[1] - (-2.0 + 5e-5)).abs() < 1e-10);
        assert_eq!(ps[0].data[2], 0.5);
    }

    #[test]
    fn three_steps_on_a_quadratic_match_the_recurrence() {
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut ps = vec![param(vec![2.0], ParamRole::Trainable)];
        let mut opt = Adam::new(cfg, &ps);
        let (mut x, mut m, mut v) = (2.0f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = 2.0 * ps[0].data[0];
            opt.step(&mut ps, &[Some(vec![g])]).unwrap();
            let gx = 2.0 * x;
            m = 0.9 * m + 0.1 * gx;
            v = 0.999 * v + 0.001 * gx * gx;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((ps[0].data[0] - x).abs() < 1e-12);
        }
        assert_eq!(opt.step, 3);
    }

    #[test]
    fn zero_gradient_and_frozen_params_stay_put() {
        let mut ps = vec![param(vec![1.0], ParamRole::Trainable), param(vec![4.0], ParamRole::Frozen)];
        let mut opt = Adam::new(AdamConfig::default(), &ps);
        opt.step(&mut ps, &[Some(vec![0.0]), Some(vec![9.0])]).unwrap();
        assert_eq!(ps[0].data, vec![1.0]);
        assert_eq!(ps[1].data, vec![4.0]);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn non_finite_gradient_rejected_without_side_effects() {
        let mut ps = vec![param(vec![1.0], ParamRole::Trainable)];
        let mut opt = Adam::new(AdamConfig::default(), &ps);
        let err = opt.step(&mut ps, &[Some(vec![f64::NAN])]).unwrap_err();
        assert!(matches!(err, TrainError::NonFiniteGradient { .. }));
        assert_eq!(ps[0].data, vec![1.0]);
        assert_eq!(opt.step, 0);
    }
}
