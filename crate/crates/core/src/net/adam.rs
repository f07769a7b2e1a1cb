use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment estimates and step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, no weight decay.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} state",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let bc1 = 1.0 - BETA1.powi(state.step as i32);
    let bc2 = 1.0 - BETA2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g;
        state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0, 3.5];
        let mut st = AdamState::new(3);
        for _ in 0..10 {
            adam_step(&mut p, &[0.0; 3], &mut st, 0.1).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let g = [3.0, -0.5, 1e-3];
        let mut p = vec![0.0; 3];
        let mut st = AdamState::new(3);
        adam_step(&mut p, &g, &mut st, 0.01).unwrap();
        for (x, gi) in p.iter().zip(g) {
            let expected = -0.01 * gi / (gi.abs() + EPSILON);
            assert!((x - expected).abs() < 1e-15);
            assert!((x + 0.01 * gi.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        // f(x, y) = (x - 3)^2 + 10 (y + 1)^2
        let mut p = vec![0.0, 0.0];
        let mut st = AdamState::new(2);
        let mut steps = 0;
        for k in 0..5000 {
            let g = [2.0 * (p[0] - 3.0), 20.0 * (p[1] + 1.0)];
            let lr = if k < 2000 { 0.05 } else { 0.005 };
            adam_step(&mut p, &g, &mut st, lr).unwrap();
            steps = k + 1;
            if (p[0] - 3.0).abs() < 1e-6 && (p[1] + 1.0).abs() < 1e-6 && k > 100 {
                break;
            }
        }
        assert!(steps <= 5000);
        assert!((p[0] - 3.0).abs() < 1e-6, "{p:?}");
        assert!((p[1] + 1.0).abs() < 1e-6, "{p:?}");
    }

    #[test]
    fn dimension_mismatch() {
        let mut st = AdamState::new(2);
        assert!(adam_step(&mut [0.0; 3], &[0.0; 3], &mut st, 0.1).is_err());
    }
}
