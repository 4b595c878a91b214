use serde::{Deserialize, Serialize};

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.first_moment.len());
        assert_eq!(grads.len(), params.len());
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for k in 0..params.len() {
            let g = grads[k];
            self.first_moment[k] = self.beta1 * self.first_moment[k] + (1.0 - self.beta1) * g;
            self.second_moment[k] =
                self.beta2 * self.second_moment[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first_moment[k] / bias1;
            let v_hat = self.second_moment[k] / bias2;
            params[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
