//! Adam with global gradient-norm clipping and continuous exponential
//! learning-rate decay.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::fmath;
use crate::matrix::pairwise_sum;
use crate::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global L2 clip applied to the whole gradient vector before the
    /// moment updates.
    pub clip_norm: f64,
    /// η(t) = learning_rate · decay_rate ^ (t / decay_steps), with t the
    /// number of completed update steps (continuous exponent).
    pub decay_rate: f64,
    pub decay_steps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 1.0,
            decay_rate: 0.9,
            decay_steps: 1000.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    beta1_pow: f64,
    beta2_pow: f64,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            beta1_pow: 1.0,
            beta2_pow: 1.0,
        }
    }

    pub fn completed_steps(&self) -> u64 {
        self.step
    }

    /// Learning rate the *next* update will use.
    pub fn learning_rate(&self) -> f64 {
        let c = &self.config;
        c.learning_rate * fmath::powf(c.decay_rate, self.step as f64 / c.decay_steps)
    }

    /// One update. Rejects non-finite gradients before touching any
    /// state, so a diverged batch cannot corrupt the moments.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(CoreError::shape(format!(
                "adam sized for {} params, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        let mut sq = Vec::with_capacity(grads.len());
        for &g in grads {
            if !g.is_finite() {
                return Err(CoreError::divergence("non-finite gradient in Adam update"));
            }
            sq.push(g * g);
        }
        let norm = fmath::sqrt(pairwise_sum(&sq));
        let clip = if norm > self.config.clip_norm && norm > 0.0 {
            self.config.clip_norm / norm
        } else {
            1.0
        };

        let lr = self.learning_rate();
        self.step += 1;
        self.beta1_pow *= self.config.beta1;
        self.beta2_pow *= self.config.beta2;
        let bc1 = 1.0 - self.beta1_pow;
        let bc2 = 1.0 - self.beta2_pow;
        let (b1, b2, eps) = (self.config.beta1, self.config.beta2, self.config.epsilon);

        for i in 0..params.len() {
            let g = grads[i] * clip;
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (fmath::sqrt(vhat) + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_steps(state: &mut AdamState, params: &mut [f64], grads: &[f64], n: usize) {
        for _ in 0..n {
            state.update(params, grads).unwrap();
        }
    }

    #[test]
    fn decayed_learning_rate_after_1000_steps() {
        let mut state = AdamState::new(1, AdamConfig::default());
        let mut p = [0.0];
        run_steps(&mut state, &mut p, &[0.0], 1000);
        assert!((state.learning_rate() - 1e-3 * 0.9).abs() < 1e-12 * 1e-3);
        // Continuous exponent between the schedule's knot points.
        let mut half = AdamState::new(1, AdamConfig::default());
        let mut p = [0.0];
        run_steps(&mut half, &mut p, &[0.0], 500);
        let expected = 1e-3 * fmath::powf(0.9, 0.5);
        assert!((half.learning_rate() - expected).abs() < 1e-15);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        // Gradient norm 5 with clip 1.0 scales every coordinate by 1/5.
        // First Adam step moves each param by -lr regardless of scale
        // (mhat/sqrt(vhat) = sign), so check the moments instead.
        let mut state = AdamState::new(2, AdamConfig::default());
        let mut params = [0.0, 0.0];
        state.update(&mut params, &[3.0, 4.0]).unwrap();
        let clipped = [3.0 / 5.0, 4.0 / 5.0];
        for i in 0..2 {
            assert!((state.m[i] - 0.1 * clipped[i]).abs() < 1e-15);
        }
        // Norm below the clip passes through untouched.
        let mut state = AdamState::new(2, AdamConfig::default());
        let mut params = [0.0, 0.0];
        state.update(&mut params, &[0.3, 0.4]).unwrap();
        assert!((state.m[0] - 0.03).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let mut state = AdamState::new(2, AdamConfig::default());
        let mut params = [1.0, 2.0];
        let before = params;
        let err = state.update(&mut params, &[f64::NAN, 0.0]).unwrap_err();
        assert!(matches!(err, CoreError::Divergence(_)));
        assert_eq!(params, before);
        assert_eq!(state.completed_steps(), 0);
    }

    #[test]
    fn converges_on_a_quadratic() {
        // f(x) = (x - 3)², minimized from 0.
        let mut config = AdamConfig::default();
        config.learning_rate = 0.05;
        let mut state = AdamState::new(1, config);
        let mut params = [0.0];
        for _ in 0..2000 {
            let g = 2.0 * (params[0] - 3.0);
            state.update(&mut params, &[g]).unwrap();
        }
        assert!((params[0] - 3.0).abs() < 1e-3, "got {}", params[0]);
    }

    #[test]
    fn bias_correction_first_step_moves_by_lr() {
        // With m̂/√v̂ = sign(g) on step one, |Δ| ≈ lr.
        let mut state = AdamState::new(1, AdamConfig::default());
        let mut params = [0.0];
        state.update(&mut params, &[0.5]).unwrap();
        assert!((params[0] + 1e-3).abs() < 1e-9, "got {}", params[0]);
    }
}
