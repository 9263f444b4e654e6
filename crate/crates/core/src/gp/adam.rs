//! Bias-corrected Adam on a flat parameter vector.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { learning_rate, beta1, beta2, eps, m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    /// Descends along `grad`, the gradient of the objective being minimized.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut a = Adam::new(2, 1e-3, 0.9, 0.999, 1e-8);
        let mut p = [1.0, -2.0];
        a.step(&mut p, &[0.0, 0.0]);
        assert_eq!(p, [1.0, -2.0]);
        assert_eq!(a.step, 1);
    }

    #[test]
    fn first_step_has_learning_rate_magnitude() {
        for g in [3.0, -0.01, 250.0] {
            let mut a = Adam::new(1, 1e-3, 0.9, 0.999, 1e-8);
            let mut p = [0.0];
            a.step(&mut p, &[g]);
            let expected = 1e-3 * g.abs() / (g.abs() + 1e-8);
            assert!((p[0].abs() - expected).abs() < 1e-15);
            assert_eq!(p[0].signum(), -g.signum());
        }
    }

    #[test]
    fn two_steps_by_hand() {
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let mut a = Adam::new(1, lr, b1, b2, eps);
        let mut p = [1.0];
        a.step(&mut p, &[2.0]);
        a.step(&mut p, &[-1.0]);
        // m1 = 0.2, v1 = 0.004; m2 = 0.08, v2 = 0.004996.
        let x1 = 1.0 - lr * (0.2 / 0.1) / ((0.004f64 / 0.001).sqrt() + eps);
        let m2: f64 = 0.9 * 0.2 + 0.1 * -1.0;
        let v2: f64 = 0.999 * 0.004 + 0.001 * 1.0;
        let x2 = x1 - lr * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64 * 0.999)).sqrt() + eps);
        assert!((p[0] - x2).abs() < 1e-14);
    }
}
