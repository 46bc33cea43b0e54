//! Adam optimizer (beta1 = 0.9, beta2 = 0.999, eps = 1e-8) with bias
//! correction. Updated parameters are re-quantized to the f32 grid.

use super::{ModelParams, NetworkConfig};
use crate::tensor::Tensor;

pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step_count: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: &NetworkConfig) -> Self {
        let zeros = ModelParams::zeros(config).expect("validated config");
        let shapes: Vec<Tensor> = zeros
            .named_tensors()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    /// One update step; `grads` mirrors the parameter layout.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let grad_tensors: Vec<&Tensor> = grads.named_tensors().iter().map(|(_, t)| *t).collect();
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grad_tensors)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let md = m.data_mut();
            let vd = v.data_mut();
            let gd = g.data();
            for (i, slot) in p.data_mut().iter_mut().enumerate() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gd[i];
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gd[i] * gd[i];
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                *slot -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            p.quantize_f32();
        }
    }
}
