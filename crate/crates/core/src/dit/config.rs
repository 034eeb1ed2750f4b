use serde::{Deserialize, Serialize};

use crate::codec::{LATENT_CHANNELS, MASK_CHANNELS};
use crate::error::{Error, Result};

/// Spatial patch edge; patches are 2x2 in space and 1 in time.
pub const PATCH: usize = 2;
pub const PATCH_CELLS: usize = PATCH * PATCH;

/// What the output head emits per latent cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputMode {
    /// `c` channels: the velocity.
    Velocity,
    /// `2c` channels, of which the first `c` are the velocity and the rest
    /// are discarded.
    Paper2c,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_blocks: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub ffn_ratio: usize,
    pub latent_channels: usize,
    pub mask_channels: usize,
    pub time_freq_dim: usize,
    pub output_mode: OutputMode,
    pub rope_base: f64,
}

impl ModelConfig {
    /// 24 blocks of 16 heads x 72 dims.
    pub fn paper() -> Self {
        ModelConfig {
            num_blocks: 24,
            num_heads: 16,
            head_dim: 72,
            ffn_ratio: 4,
            latent_channels: LATENT_CHANNELS,
            mask_channels: MASK_CHANNELS,
            time_freq_dim: 256,
            output_mode: OutputMode::Paper2c,
            rope_base: 10_000.0,
        }
    }

    /// CPU-trainable default: 4 blocks of 4 heads x 24 dims.
    pub fn tiny() -> Self {
        ModelConfig {
            num_blocks: 4,
            num_heads: 4,
            head_dim: 24,
            output_mode: OutputMode::Velocity,
            ..Self::paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!(
                "unknown model preset {other:?} (expected tiny or paper)"
            ))),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.num_heads * self.head_dim
    }

    pub fn ffn_dim(&self) -> usize {
        self.ffn_ratio * self.embed_dim()
    }

    /// Scalars per token entering the output head.
    pub fn head_out_dim(&self) -> usize {
        let per_cell = match self.output_mode {
            OutputMode::Velocity => self.latent_channels,
            OutputMode::Paper2c => 2 * self.latent_channels,
        };
        PATCH_CELLS * per_cell
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.head_dim == 0 || self.ffn_ratio == 0 {
            return Err(Error::Config("heads, head_dim and ffn_ratio must be positive".into()));
        }
        if self.latent_channels == 0 || self.mask_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.time_freq_dim == 0 || !self.time_freq_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "time frequency dim must be positive and even, got {}",
                self.time_freq_dim
            )));
        }
        if self.rope_base.is_nan() || self.rope_base <= 1.0 {
            return Err(Error::Config("rope base must exceed 1".into()));
        }
        rope_sections(self.head_dim)?;
        Ok(())
    }

    /// Parameter names and shapes in canonical order. Weights are stored
    /// `[in, out]` and applied as `x W + b`.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.embed_dim();
        let f = self.ffn_dim();
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        let mut linear = |name: &str, fan_in: usize, fan_out: usize| {
            out.push((format!("{name}.weight"), vec![fan_in, fan_out]));
            out.push((format!("{name}.bias"), vec![fan_out]));
        };
        let latent_patch = PATCH_CELLS * self.latent_channels;
        linear("embed.noise", latent_patch, d);
        linear("embed.latent", latent_patch, d);
        linear("embed.mask", PATCH_CELLS * self.mask_channels, d);
        linear("time.fc1", self.time_freq_dim, d);
        linear("time.fc2", d, d);
        if self.num_blocks > 0 {
            linear("blocks.modulation", d, 6 * d);
        }
        for i in 0..self.num_blocks {
            out.push((format!("blocks.{i}.modulation"), vec![6 * d]));
            let mut linear = |name: &str, fan_in: usize, fan_out: usize| {
                out.push((format!("blocks.{i}.{name}.weight"), vec![fan_in, fan_out]));
                out.push((format!("blocks.{i}.{name}.bias"), vec![fan_out]));
            };
            linear("attn.qkv", d, 3 * d);
            linear("attn.proj", d, d);
            linear("ffn.fc1", d, f);
            linear("ffn.fc2", f, d);
        }
        let mut linear = |name: &str, fan_in: usize, fan_out: usize| {
            out.push((format!("{name}.weight"), vec![fan_in, fan_out]));
            out.push((format!("{name}.bias"), vec![fan_out]));
        };
        linear("final.modulation", d, 2 * d);
        linear("final.head", d, self.head_out_dim());
        out
    }
}

/// Parameter count computed in closed form from the config.
pub fn param_count(cfg: &ModelConfig) -> u64 {
    let d = cfg.embed_dim() as u64;
    let f = cfg.ffn_dim() as u64;
    let lin = |i: u64, o: u64| i * o + o;
    let cells = PATCH_CELLS as u64;
    let embed = 2 * lin(cells * cfg.latent_channels as u64, d) + lin(cells * cfg.mask_channels as u64, d);
    let time = lin(cfg.time_freq_dim as u64, d) + lin(d, d);
    let blocks = cfg.num_blocks as u64;
    let shared = if blocks > 0 { lin(d, 6 * d) } else { 0 };
    let per_block = 6 * d + lin(d, 3 * d) + lin(d, d) + lin(d, f) + lin(f, d);
    let fin = lin(d, 2 * d) + lin(d, cfg.head_out_dim() as u64);
    embed + time + shared + blocks * per_block + fin
}

/// Head-dimension split across (time, row, column) rotary sections: time
/// gets `ceil(d/3)` rounded up to even, rows and columns split the rest.
pub fn rope_sections(head_dim: usize) -> Result<[usize; 3]> {
    let fail = || {
        Error::Config(format!(
            "head_dim {head_dim} cannot be split into three even rotary sections"
        ))
    };
    if !head_dim.is_multiple_of(2) {
        return Err(fail());
    }
    let mut time = head_dim.div_ceil(3);
    time += time % 2;
    let rest = head_dim.checked_sub(time).ok_or_else(fail)?;
    if rest == 0 || rest % 4 != 0 {
        return Err(fail());
    }
    Ok([time, rest / 2, rest / 2])
}
