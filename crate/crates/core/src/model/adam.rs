use serde::{Deserialize, Serialize};

use super::params::ParamVector;
use crate::error::{Error, Result};

/// Learning rate used when none is configured.
pub const DEFAULT_LEARNING_RATE: f64 = 3e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut ParamVector,
    grad: &ParamVector,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if state.m.len() != params.len() || state.v.len() != params.len() || grad.len() != params.len() {
        return Err(Error::InvalidInput("optimizer state does not match parameters".into()));
    }
    if !lr.is_finite() {
        return Err(Error::NonFinite { segment: "learning_rate".into() });
    }
    grad.check_finite()?;
    params.check_finite()?;

    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let p = params.values_mut();
    for i in 0..p.len() {
        let g = grad.values()[i];
        let m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        p[i] -= lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, TaskMode};

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 4,
            embed_dim: 1,
            hidden_dim: 1,
            depth: 1,
            num_classes: 2,
            task: TaskMode::Classification,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let cfg = tiny();
        let mut p = ParamVector::init(&cfg, 1);
        let before = p.clone();
        let g = p.zeros_like();
        let mut s = AdamState::new(p.len());
        adam_step(&mut p, &g, &mut s, 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_is_learning_rate() {
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
        let cfg = tiny();
        let mut p = ParamVector::zeros(&cfg);
        let mut g = p.zeros_like();
        g.values_mut()[0] = 1.0;
        let mut s = AdamState::new(p.len());
        adam_step(&mut p, &g, &mut s, 0.1, &AdamConfig::default()).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p.values()[0] - expected).abs() < 1e-15);
        assert!((p.values()[0] + 0.1).abs() < 1e-8);
        // Constant gradient keeps the bias-corrected step at lr.
        adam_step(&mut p, &g, &mut s, 0.1, &AdamConfig::default()).unwrap();
        assert!((p.values()[0] + 0.2).abs() < 1e-7);
    }

    #[test]
    fn default_learning_rate() {
        assert_eq!(DEFAULT_LEARNING_RATE, 3e-5);
    }

    #[test]
    fn rejects_non_finite() {
        let cfg = tiny();
        let mut p = ParamVector::zeros(&cfg);
        let mut g = p.zeros_like();
        g.values_mut()[1] = f64::INFINITY;
        let mut s = AdamState::new(p.len());
        let err = adam_step(&mut p, &g, &mut s, 0.1, &AdamConfig::default()).unwrap_err();
        assert!(err.is_numerical());
        assert_eq!(s.step, 0);
    }

    #[test]
    fn rejects_mismatched_state() {
        let cfg = tiny();
        let mut p = ParamVector::zeros(&cfg);
        let g = p.zeros_like();
        let mut s = AdamState::new(p.len() + 1);
        assert!(adam_step(&mut p, &g, &mut s, 0.1, &AdamConfig::default()).is_err());
    }
}
