use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::{Error, Result};

/// Scales `grads` so their global L2 norm is at most `max_norm`. Returns the
/// norm measured before clipping.
pub fn clip_global_norm(grads: &mut ParamSet, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// AdamW with decoupled weight decay and bias correction.
#[derive(Debug, Clone)]
pub struct AdamWState {
    pub config: AdamWConfig,
    m: ParamSet,
    v: ParamSet,
    t: u64,
}

impl AdamWState {
    pub fn new(params: &ParamSet, config: AdamWConfig) -> Self {
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &ParamSet {
        &self.m
    }

    pub fn second_moment(&self) -> &ParamSet {
        &self.v
    }

    /// One update at learning rate `lr_now` (the schedule's value; the
    /// configured `lr` is the base rate).
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, lr_now: f64) -> Result<()> {
        params.check_compatible(grads, "adamw grads")?;
        params.check_compatible(&self.m, "adamw state")?;
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
        if lr_now < 0.0 {
            return Err(Error::InvalidArgument(format!("negative learning rate {lr_now}")));
        }
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let decay = 1.0 - lr_now * weight_decay;
        for (((p, g), m), v) in params
            .tensors_mut()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for (((pi, gi), mi), vi) in p
                .values_mut()
                .iter_mut()
                .zip(g.values())
                .zip(m.values_mut().iter_mut())
                .zip(v.values_mut().iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi = *pi * decay - lr_now * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Zeroes both moments and the step counter; hyperparameters are kept.
    pub fn reset(&mut self) {
        self.m.fill(0.0);
        self.v.fill(0.0);
        self.t = 0;
    }

    /// Clears the moment estimates of selected entries: `(entry index, flat
    /// value index)` pairs.
    pub fn clear_moments(&mut self, slots: &[(usize, usize)]) {
        for &(entry, i) in slots {
            self.m.at_mut(entry).values_mut()[i] = 0.0;
            self.v.at_mut(entry).values_mut()[i] = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor2;

    fn scalar(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("l1.weight", Tensor2::filled(1, 1, v)).unwrap();
        p
    }

    #[test]
    fn single_step_with_bias_correction() {
        let mut p = scalar(0.0);
        let mut opt = AdamWState::new(&p, AdamWConfig::default());
        opt.step(&mut p, &scalar(1.0), 0.001).unwrap();
        // m̂ = v̂ = 1 → θ = −lr · 1 / (1 + ε)
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p.at(0).values()[0] - expected).abs() < 1e-15);
        assert!((p.at(0).values()[0] + 0.000999999).abs() < 1e-9);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn decoupled_weight_decay() {
        let mut p = scalar(1.0);
        let mut opt = AdamWState::new(
            &p,
            AdamWConfig {
                weight_decay: 0.1,
                ..AdamWConfig::default()
            },
        );
        opt.step(&mut p, &scalar(0.0), 0.001).unwrap();
        assert!((p.at(0).values()[0] - 0.9999).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_keeps_params_but_moves_moments() {
        let mut p = scalar(0.5);
        let mut opt = AdamWState::new(&p, AdamWConfig::default());
        opt.step(&mut p, &scalar(2.0), 0.0).unwrap();
        assert_eq!(p.at(0).values()[0], 0.5);
        assert!(opt.first_moment().at(0).values()[0] > 0.0);
        assert!(opt.second_moment().at(0).values()[0] > 0.0);
    }

    #[test]
    fn non_finite_gradient_names_the_entry() {
        let mut p = scalar(0.0);
        let mut opt = AdamWState::new(&p, AdamWConfig::default());
        let err = opt.step(&mut p, &scalar(f64::NAN), 0.001).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "l1.weight"));
    }

    #[test]
    fn reset_is_idempotent_and_keeps_hyperparameters() {
        let mut p = scalar(0.0);
        let cfg = AdamWConfig {
            lr: 0.01,
            beta1: 0.8,
            beta2: 0.99,
            eps: 1e-6,
            weight_decay: 0.3,
        };
        let mut opt = AdamWState::new(&p, cfg);
        opt.step(&mut p, &scalar(1.0), 0.01).unwrap();
        opt.reset();
        assert_eq!(opt.step_count(), 0);
        assert_eq!(opt.first_moment().max_abs(), 0.0);
        assert_eq!(opt.second_moment().max_abs(), 0.0);
        opt.reset();
        assert_eq!(opt.step_count(), 0);
        assert_eq!(opt.config, cfg);
    }

    #[test]
    fn clipping() {
        let mut g = ParamSet::new();
        g.push("a", Tensor2::from_vec(1, 2, vec![0.6, 0.8]).unwrap()).unwrap();
        let before = clip_global_norm(&mut g, 0.5);
        assert!((before - 1.0).abs() < 1e-15);
        assert_eq!(g.flatten(), vec![0.3, 0.4]);

        let mut small = ParamSet::new();
        small.push("a", Tensor2::from_vec(1, 2, vec![0.18, 0.24]).unwrap()).unwrap();
        clip_global_norm(&mut small, 0.5);
        assert_eq!(small.flatten(), vec![0.18, 0.24]);

        let mut zero = ParamSet::new();
        zero.push("a", Tensor2::zeros(1, 3)).unwrap();
        clip_global_norm(&mut zero, 0.5);
        assert_eq!(zero.max_abs(), 0.0);
    }
}
