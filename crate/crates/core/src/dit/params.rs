use crate::dit::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Scalar, Tensor};

/// Affine layer `y = x W + b` with `W` stored `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    fn zeros(fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Linear {
            weight: Tensor::zeros(&[fan_in, fan_out])?,
            bias: Tensor::zeros(&[fan_out])?,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    fn xavier(&mut self, rng: &mut RngStream) {
        let limit = (6.0 / (self.fan_in() + self.fan_out()) as f64).sqrt();
        for w in self.weight.data_mut() {
            *w = T::from_f64(rng.uniform_range(-limit, limit));
        }
    }

    fn normal(&mut self, rng: &mut RngStream, std: f64) {
        for w in self.weight.data_mut() {
            *w = T::from_f64(rng.normal() * std);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T: Scalar> {
    /// Per-block offset added to the shared modulation:
    /// `[shift_attn, scale_attn, gate_attn, shift_ffn, scale_ffn, gate_ffn]`.
    pub modulation: Tensor<T>,
    pub qkv: Linear<T>,
    pub proj: Linear<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

/// All trainable tensors of the transformer. The same type holds gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct DitParams<T: Scalar> {
    pub embed_noise: Linear<T>,
    pub embed_latent: Linear<T>,
    pub embed_mask: Linear<T>,
    pub time_fc1: Linear<T>,
    pub time_fc2: Linear<T>,
    /// Timestep-to-modulation head shared by all blocks; absent with zero blocks.
    pub block_modulation: Option<Linear<T>>,
    pub blocks: Vec<BlockParams<T>>,
    pub final_modulation: Linear<T>,
    pub head: Linear<T>,
}

/// Column ranges of the six modulation vectors within a `6D` row.
pub(crate) const SHIFT_ATTN: usize = 0;
pub(crate) const SCALE_ATTN: usize = 1;
pub(crate) const GATE_ATTN: usize = 2;
pub(crate) const SHIFT_FFN: usize = 3;
pub(crate) const SCALE_FFN: usize = 4;
pub(crate) const GATE_FFN: usize = 5;

impl<T: Scalar> DitParams<T> {
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim();
        let f = cfg.ffn_dim();
        let cells = crate::dit::config::PATCH_CELLS;
        let blocks = (0..cfg.num_blocks)
            .map(|_| {
                Ok(BlockParams {
                    modulation: Tensor::zeros(&[6 * d])?,
                    qkv: Linear::zeros(d, 3 * d)?,
                    proj: Linear::zeros(d, d)?,
                    fc1: Linear::zeros(d, f)?,
                    fc2: Linear::zeros(f, d)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DitParams {
            embed_noise: Linear::zeros(cells * cfg.latent_channels, d)?,
            embed_latent: Linear::zeros(cells * cfg.latent_channels, d)?,
            embed_mask: Linear::zeros(cells * cfg.mask_channels, d)?,
            time_fc1: Linear::zeros(cfg.time_freq_dim, d)?,
            time_fc2: Linear::zeros(d, d)?,
            block_modulation: if cfg.num_blocks > 0 {
                Some(Linear::zeros(d, 6 * d)?)
            } else {
                None
            },
            blocks,
            final_modulation: Linear::zeros(d, 2 * d)?,
            head: Linear::zeros(d, cfg.head_out_dim())?,
        })
    }

    /// Training initialization: Xavier-uniform linears with zero biases,
    /// N(0, 0.02) for the timestep MLP and the shift/scale parts of the
    /// modulation heads, and zeros for every gate and for the output head, so
    /// each block starts as the identity and the model predicts zero.
    pub fn init(cfg: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        let mut p = Self::zeros(cfg)?;
        let d = cfg.embed_dim();
        p.embed_noise.xavier(rng);
        p.embed_latent.xavier(rng);
        p.embed_mask.xavier(rng);
        p.time_fc1.normal(rng, 0.02);
        p.time_fc2.normal(rng, 0.02);
        if let Some(m) = p.block_modulation.as_mut() {
            m.normal(rng, 0.02);
            let w = m.weight.data_mut();
            for row in w.chunks_exact_mut(6 * d) {
                row[GATE_ATTN * d..(GATE_ATTN + 1) * d].fill(T::ZERO);
                row[GATE_FFN * d..(GATE_FFN + 1) * d].fill(T::ZERO);
            }
        }
        for b in &mut p.blocks {
            for (k, v) in b.modulation.data_mut().iter_mut().enumerate() {
                let part = k / d;
                if part != GATE_ATTN && part != GATE_FFN {
                    *v = T::from_f64(rng.normal() * 0.02);
                }
            }
            b.qkv.xavier(rng);
            b.proj.xavier(rng);
            b.fc1.xavier(rng);
            b.fc2.xavier(rng);
        }
        p.final_modulation.normal(rng, 0.02);
        Ok(p)
    }

    /// Every entry drawn from N(0, std^2); used for gradient verification
    /// where zero gates would hide most of the graph.
    pub fn random(cfg: &ModelConfig, rng: &mut RngStream, std: f64) -> Result<Self> {
        let mut p = Self::zeros(cfg)?;
        for t in p.tensors_mut() {
            for v in t.data_mut() {
                *v = T::from_f64(rng.normal() * std);
            }
        }
        Ok(p)
    }

    /// Zeroes every gate so each block is the identity map.
    pub fn zero_gates(&mut self) {
        let Some(shared) = self.block_modulation.as_mut() else {
            return;
        };
        let d = shared.fan_in();
        for row in shared
            .weight
            .data_mut()
            .chunks_exact_mut(6 * d)
            .chain(std::iter::once(shared.bias.data_mut()))
        {
            row[GATE_ATTN * d..(GATE_ATTN + 1) * d].fill(T::ZERO);
            row[GATE_FFN * d..(GATE_FFN + 1) * d].fill(T::ZERO);
        }
        for b in &mut self.blocks {
            let m = b.modulation.data_mut();
            m[GATE_ATTN * d..(GATE_ATTN + 1) * d].fill(T::ZERO);
            m[GATE_FFN * d..(GATE_FFN + 1) * d].fill(T::ZERO);
        }
    }

    /// Tensors in manifest order.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        fn push<'a, T: Scalar>(l: &'a Linear<T>, out: &mut Vec<&'a Tensor<T>>) {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        let mut out = Vec::new();
        push(&self.embed_noise, &mut out);
        push(&self.embed_latent, &mut out);
        push(&self.embed_mask, &mut out);
        push(&self.time_fc1, &mut out);
        push(&self.time_fc2, &mut out);
        if let Some(m) = &self.block_modulation {
            push(m, &mut out);
        }
        for b in &self.blocks {
            out.push(&b.modulation);
            push(&b.qkv, &mut out);
            push(&b.proj, &mut out);
            push(&b.fc1, &mut out);
            push(&b.fc2, &mut out);
        }
        push(&self.final_modulation, &mut out);
        push(&self.head, &mut out);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        fn push<'a, T: Scalar>(l: &'a mut Linear<T>, out: &mut Vec<&'a mut Tensor<T>>) {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        let mut out = Vec::new();
        push(&mut self.embed_noise, &mut out);
        push(&mut self.embed_latent, &mut out);
        push(&mut self.embed_mask, &mut out);
        push(&mut self.time_fc1, &mut out);
        push(&mut self.time_fc2, &mut out);
        if let Some(m) = &mut self.block_modulation {
            push(m, &mut out);
        }
        for b in &mut self.blocks {
            out.push(&mut b.modulation);
            push(&mut b.qkv, &mut out);
            push(&mut b.proj, &mut out);
            push(&mut b.fc1, &mut out);
            push(&mut b.fc2, &mut out);
        }
        push(&mut self.final_modulation, &mut out);
        push(&mut self.head, &mut out);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// All parameters concatenated in manifest order.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn assign_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut at = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self, cfg: &ModelConfig) -> Result<DitParams<U>> {
        let mut out = DitParams::<U>::zeros(cfg)?;
        let flat: Vec<U> = self.flatten().into_iter().map(|v| U::from_f64(v.to_f64())).collect();
        out.assign_flat(&flat)?;
        Ok(out)
    }

    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            for v in t.data_mut() {
                *v *= s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_order_follows_manifest() {
        for cfg in [
            ModelConfig::tiny(),
            ModelConfig {
                num_blocks: 0,
                ..ModelConfig::tiny()
            },
        ] {
            let p = DitParams::<f32>::zeros(&cfg).unwrap();
            let shapes: Vec<Vec<usize>> = p.tensors().iter().map(|t| t.shape().to_vec()).collect();
            let manifest: Vec<Vec<usize>> = cfg.manifest().into_iter().map(|(_, s)| s).collect();
            assert_eq!(shapes, manifest);
        }
    }

    #[test]
    fn init_zeroes_gates_and_head() {
        let cfg = ModelConfig::tiny();
        let d = cfg.embed_dim();
        let p = DitParams::<f32>::init(&cfg, &mut RngStream::new(0, 0)).unwrap();
        let shared = p.block_modulation.as_ref().unwrap();
        for row in shared.weight.data().chunks(6 * d).chain([shared.bias.data()]) {
            assert!(row[2 * d..3 * d].iter().all(|&v| v == 0.0));
            assert!(row[5 * d..].iter().all(|&v| v == 0.0));
        }
        assert!(shared.weight.data()[..d].iter().any(|&v| v != 0.0));
        for b in &p.blocks {
            assert!(b.modulation.data()[2 * d..3 * d].iter().all(|&v| v == 0.0));
        }
        assert!(p.head.weight.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flatten_roundtrip() {
        let cfg = ModelConfig {
            num_blocks: 1,
            ..ModelConfig::tiny()
        };
        let p = DitParams::<f64>::random(&cfg, &mut RngStream::new(1, 0), 1.0).unwrap();
        let mut q = DitParams::<f64>::zeros(&cfg).unwrap();
        q.assign_flat(&p.flatten()).unwrap();
        assert_eq!(p, q);
        assert!(q.assign_flat(&[0.0]).is_err());
    }
}
