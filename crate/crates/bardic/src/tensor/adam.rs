use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamSlot {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Optimizer state: first/second moments per named tensor plus the shared
/// step counter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub t: u64,
    pub slots: BTreeMap<String, AdamSlot>,
}

impl AdamState {
    pub fn new(hyper: AdamHyper) -> Self {
        AdamState {
            hyper,
            t: 0,
            slots: BTreeMap::new(),
        }
    }

    /// Advance the step counter. Call once per optimizer step, before
    /// updating tensors; bias correction uses the incremented count.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Update one named tensor in place from its gradient.
    pub fn update(&mut self, name: &str, params: &mut [f64], grads: &[f64]) -> Result<()> {
        assert_eq!(params.len(), grads.len(), "adam: shape mismatch for {name}");
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient for {name}")));
        }
        let slot = self
            .slots
            .entry(name.to_string())
            .or_insert_with(|| AdamSlot {
                m: vec![0.0; params.len()],
                v: vec![0.0; params.len()],
            });
        let h = &self.hyper;
        let bc1 = 1.0 - h.beta1.powi(self.t as i32);
        let bc2 = 1.0 - h.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            let g = grads[k];
            slot.m[k] = h.beta1 * slot.m[k] + (1.0 - h.beta1) * g;
            slot.v[k] = h.beta2 * slot.v[k] + (1.0 - h.beta2) * g * g;
            let m_hat = slot.m[k] / bc1;
            let v_hat = slot.v[k] / bc2;
            params[k] -= h.lr * m_hat / (v_hat.sqrt() + h.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut state = AdamState::new(AdamHyper::default());
        let mut p = vec![1.0];
        state.begin_step();
        state.update("p", &mut p, &[0.3]).unwrap();
        let delta = (1.0 - p[0]).abs();
        assert!((delta - 0.001).abs() < 1e-6, "delta {delta}");
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut state = AdamState::new(AdamHyper::default());
        let mut p = vec![2.5, -1.0];
        for _ in 0..10 {
            state.begin_step();
            state.update("p", &mut p, &[0.0, 0.0]).unwrap();
        }
        assert_eq!(p, vec![2.5, -1.0]);
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        // f(x) = x^2, gradient 2x, lr 0.1
        let hyper = AdamHyper {
            lr: 0.1,
            ..AdamHyper::default()
        };
        let mut state = AdamState::new(hyper);
        let mut p = vec![1.0];
        for _ in 0..200 {
            let g = [2.0 * p[0]];
            state.begin_step();
            state.update("x", &mut p, &g).unwrap();
        }
        assert!(p[0].abs() < 0.1, "x = {}", p[0]);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut state = AdamState::new(AdamHyper::default());
        let mut p = vec![1.0];
        state.begin_step();
        assert!(state.update("p", &mut p, &[f64::NAN]).is_err());
    }
}
