use super::layers::ParamGrad;
use super::model::{CnnModel, Gradients};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates, one slot per layer of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Option<ParamGrad>>,
    v: Vec<Option<ParamGrad>>,
}

impl AdamState {
    pub fn new(model: &CnnModel, config: AdamConfig) -> Self {
        let zeros = Gradients::zeros_like(model).layers;
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected Adam update with step size `learning_rate`.
    pub fn apply(&mut self, model: &mut CnnModel, grads: &Gradients, learning_rate: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let (ms, vs) = (&mut self.m, &mut self.v);
        model.update_params(|i, w, b| {
            let (Some(g), Some(m), Some(v)) = (&grads.layers[i], &mut ms[i], &mut vs[i]) else {
                return;
            };
            let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for k in 0..p.len() {
                    m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                    v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                    let m_hat = m[k] / c1;
                    let v_hat = v[k] / c2;
                    p[k] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                }
            };
            update(w, &g.weights, &mut m.weights, &mut v.weights);
            update(b, &g.bias, &mut m.bias, &mut v.bias);
        });
    }
}
