//! AdamW optimizer with decoupled weight decay.

use crate::error::{Error, Result};
use crate::gradcore::tensor::ParamSet;

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    name: String,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer state. Moment slots are created lazily per parameter name, in
/// first-seen order, and always match the parameter's element count.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    moments: Vec<Moments>,
    step_count: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            moments: Vec::new(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    fn moments_for(&mut self, name: &str, numel: usize) -> Result<usize> {
        if let Some(i) = self.moments.iter().position(|m| m.name == name) {
            if self.moments[i].m.len() != numel {
                return Err(Error::Parameter(format!(
                    "optimizer moments for '{name}' have {} values, parameter has {numel}",
                    self.moments[i].m.len()
                )));
            }
            return Ok(i);
        }
        self.moments.push(Moments {
            name: name.to_string(),
            m: vec![0.0; numel],
            v: vec![0.0; numel],
        });
        Ok(self.moments.len() - 1)
    }

    /// One update over every parameter's accumulated gradient. Any non-finite
    /// gradient aborts before touching parameters or moments.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        for (name, tensor) in params.iter() {
            let grad = tensor.grad().ok_or_else(|| {
                Error::Contract(format!("parameter '{name}' has no gradient at optimizer step"))
            })?;
            if grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(name.to_string()));
            }
        }

        self.step_count += 1;
        let t = self.step_count;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(t as i32);
        let bc2 = 1.0 - c.beta2.powi(t as i32);

        for (name, tensor) in params.iter_mut() {
            let numel = tensor.numel();
            let slot = self.moments_for(name, numel)?;
            let moments = &mut self.moments[slot];
            let grad = tensor.grad().unwrap().to_vec();
            let data = tensor.data_mut();
            for i in 0..numel {
                moments.m[i] = c.beta1 * moments.m[i] + (1.0 - c.beta1) * grad[i];
                moments.v[i] = c.beta2 * moments.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
                let m_hat = moments.m[i] / bc1;
                let v_hat = moments.v[i] / bc2;
                data[i] *= 1.0 - c.learning_rate * c.weight_decay;
                data[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// Drop accumulated gradients ahead of the next batch.
pub fn clear_grads(params: &mut ParamSet) {
    for (_, tensor) in params.iter_mut() {
        tensor.clear_grad();
    }
}
