use serde::{Deserialize, Serialize};

use super::{Grads, MlpModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid Adam configuration {self:?}")))
        }
    }
}

/// Learning rate multiplied by `gamma` every `step` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub step: usize,
    pub gamma: f64,
}

impl Default for StepDecay {
    fn default() -> Self {
        StepDecay { step: 20, gamma: 0.5 }
    }
}

impl StepDecay {
    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        base * self.gamma.powi((epoch / self.step.max(1)) as i32)
    }
}

/// First and second moment estimates for one tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

/// One bias-corrected Adam update with decoupled weight decay: parameters
/// are first shrunk by `1 - lr * weight_decay`, then moved by the Adam delta.
pub fn adam_step(name: &str, params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(format!("`{name}`: {} params vs {} grads", params.len(), grads.len())));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient of `{name}` at element {i}")));
    }
    if state.m.len() != params.len() {
        *state = AdamState::new(params.len());
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *p *= decay;
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam over every trainable tensor of a model.
#[derive(Debug, Clone, Default)]
pub struct Adam {
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &Grads, cfg: &AdamConfig) -> Result<()> {
        let tensors = model.trainable_with_grads(grads);
        // Validate everything first so a bad gradient leaves the model untouched.
        for (name, p, g) in &tensors {
            if p.len() != g.len() {
                return Err(Error::shape(format!("`{name}`: {} params vs {} grads", p.len(), g.len())));
            }
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of `{name}` at element {i}")));
            }
        }
        if self.states.len() != tensors.len() {
            self.states = tensors.iter().map(|(_, p, _)| AdamState::new(p.len())).collect();
        }
        for ((name, p, g), state) in tensors.into_iter().zip(&mut self.states) {
            adam_step(&name, p, g, state, cfg)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig { weight_decay: 0.0, ..Default::default() };
        for g in [3.0, -0.25] {
            let mut p = [1.0];
            let mut st = AdamState::new(1);
            adam_step("w", &mut p, &[g], &mut st, &cfg).unwrap();
            let delta = p[0] - 1.0;
            assert!((delta + cfg.lr * g.signum()).abs() < 1e-7, "{delta}");
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let cfg = AdamConfig { weight_decay: 0.0, ..Default::default() };
        let mut p = [0.7, -1.2];
        let mut st = AdamState::new(2);
        for _ in 0..10 {
            adam_step("w", &mut p, &[0.0, 0.0], &mut st, &cfg).unwrap();
        }
        assert_eq!(p, [0.7, -1.2]);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let cfg = AdamConfig { lr: 0.1, weight_decay: 0.5, ..Default::default() };
        let mut p = [2.0];
        let mut st = AdamState::new(1);
        adam_step("w", &mut p, &[0.0], &mut st, &cfg).unwrap();
        assert!((p[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn minimizes_a_parabola() {
        let cfg = AdamConfig { lr: 0.1, weight_decay: 0.0, ..Default::default() };
        let mut w = [1.0];
        let mut st = AdamState::new(1);
        for _ in 0..100 {
            let g = [2.0 * w[0]];
            adam_step("w", &mut w, &g, &mut st, &cfg).unwrap();
        }
        assert!(w[0].abs() < 0.05, "{}", w[0]);
    }

    #[test]
    fn non_finite_gradient_names_the_tensor() {
        let mut p = [1.0];
        let err = adam_step("fc0.weight", &mut p, &[f64::NAN], &mut AdamState::new(1), &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("fc0.weight"));
        assert_eq!(p, [1.0]);
    }

    #[test]
    fn step_decay_schedule() {
        let s = StepDecay::default();
        assert_eq!(s.lr_at(1e-3, 0), 1e-3);
        assert_eq!(s.lr_at(1e-3, 19), 1e-3);
        assert_eq!(s.lr_at(1e-3, 20), 5e-4);
        assert_eq!(s.lr_at(1e-3, 45), 2.5e-4);
    }
}
