//! AdamW: Adam with bias correction and decoupled weight decay.
//!
//! Decay multiplies each decayed parameter by `1 - lr * weight_decay` using
//! its pre-step value, independently of the adaptive update. Biases and
//! LayerNorm parameters are exempt (their layout specs are not marked as
//! decayed).

use super::{Gradients, ModelError, ModelParameters};

#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64, n_params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One optimizer step over all parameters.
    pub fn step(
        &mut self,
        params: &mut ModelParameters,
        grads: &Gradients,
    ) -> Result<(), ModelError> {
        if grads.data.len() != params.data.len() || self.m.len() != params.data.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "optimizer holds {} slots, model has {}, gradients have {}",
                self.m.len(),
                params.data.len(),
                grads.data.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);

        for spec in params.layout.specs() {
            let decay = if spec.decayed {
                self.lr * self.weight_decay
            } else {
                0.0
            };
            for i in spec.range() {
                let g = grads.data[i];
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[i] / bc1;
                let v_hat = self.v[i] / bc2;
                let theta = params.data[i];
                params.data[i] = theta - decay * theta - self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
