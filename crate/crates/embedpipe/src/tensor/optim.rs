use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError, TensorResult};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are keyed by parameter index,
/// so the same step order must be used on every call.
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, param_sizes: &[usize]) -> Self {
        Self {
            cfg,
            step: 0,
            m: param_sizes.iter().map(|n| vec![0.0; *n]).collect(),
            v: param_sizes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over parallel slices of parameters and gradients.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> TensorResult<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                lhs: vec![params.len()],
                rhs: vec![self.m.len()],
            });
        }
        for ((p, g), i) in params.iter().zip(grads).zip(0..) {
            if p.shape() != g.shape() || p.numel() != self.m[i].len() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for (j, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.cfg.beta1 * m[j] + (1.0 - self.cfg.beta1) * gv;
                v[j] = self.cfg.beta2 * v[j] + (1.0 - self.cfg.beta2) * gv * gv;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *pv -= self.cfg.lr * mh / (vh.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}
