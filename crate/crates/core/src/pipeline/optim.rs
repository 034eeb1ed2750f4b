use crate::dit::{DitParams, ModelConfig};
use crate::error::Result;

/// Adam with decoupled weight decay and a constant learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Updates applied so far.
    pub step: u64,
    pub m: DitParams<f32>,
    pub v: DitParams<f32>,
}

impl AdamW {
    pub fn new(cfg: &ModelConfig, lr: f64, beta1: f64, beta2: f64, weight_decay: f64) -> Result<Self> {
        Ok(AdamW {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: DitParams::zeros(cfg)?,
            v: DitParams::zeros(cfg)?,
        })
    }

    pub fn update(&mut self, params: &mut DitParams<f32>, grads: &DitParams<f32>) {
        self.step += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let step_size = (self.lr / c1) as f32;
        let decay = (self.lr * self.weight_decay) as f32;
        let inv_c2 = (1.0 / c2) as f32;
        let eps = self.eps as f32;
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (((p, g), m), v) in tensors {
            let moments = m.data_mut().iter_mut().zip(v.data_mut());
            for ((w, &gi), (mi, vi)) in p.data_mut().iter_mut().zip(g.data()).zip(moments) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let denom = (*vi * inv_c2).sqrt() + eps;
                *w -= decay * *w + step_size * *mi / denom;
            }
        }
    }
}
