//! Training configuration in a flat `key = value` text format.
//!
//! ```text
//! # comments and blank lines are ignored
//! model = tiny
//! stages = 32x32x17:1000, 64x64x17:1000
//! batch_size = 4
//! learning_rate = 1e-3
//! ```
//!
//! Stages are `HxWxN:iterations`, run in order. Unknown or repeated keys are
//! errors.

use std::collections::HashSet;
use std::path::Path;
use std::str::FromStr;

use crate::codec::{SPATIAL_FACTOR, TEMPORAL_FACTOR};
use crate::dit::{ModelConfig, PATCH};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub iterations: usize,
}

impl Stage {
    pub fn validate(&self) -> Result<()> {
        let unit = SPATIAL_FACTOR * PATCH;
        if self.iterations == 0 {
            return Err(Error::Config("stage iterations must be positive".into()));
        }
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(unit) || !self.width.is_multiple_of(unit)
        {
            return Err(Error::Config(format!(
                "stage resolution {}x{} must be a positive multiple of {unit}",
                self.height, self.width
            )));
        }
        if self.frames % TEMPORAL_FACTOR != 1 {
            return Err(Error::Config(format!("stage frame count {} must be 4k+1", self.frames)));
        }
        Ok(())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("stage {s:?} is not of the form HxWxN:iterations"));
        let (dims, iters) = s.trim().split_once(':').ok_or_else(bad)?;
        let d: Vec<usize> = dims
            .split('x')
            .map(|v| v.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [height, width, frames] = d[..] else {
            return Err(bad());
        };
        let stage = Stage {
            height,
            width,
            frames,
            iterations: iters.trim().parse().map_err(|_| bad())?,
        };
        stage.validate()?;
        Ok(stage)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub stages: Vec<Stage>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Fraction of training masks that move.
    pub moving_ratio: f64,
    /// Save a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::tiny(),
            stages: vec![
                Stage {
                    height: 32,
                    width: 32,
                    frames: 17,
                    iterations: 1000,
                },
                Stage {
                    height: 64,
                    width: 64,
                    frames: 17,
                    iterations: 1000,
                },
            ],
            batch_size: 8,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
            moving_ratio: 0.5,
            checkpoint_every: 500,
            log_every: 50,
        }
    }
}

const KEYS: &[&str] = &[
    "model",
    "stages",
    "batch_size",
    "learning_rate",
    "weight_decay",
    "beta1",
    "beta2",
    "seed",
    "moving_ratio",
    "checkpoint_every",
    "log_every",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl TrainConfig {
    /// Full-scale schedule: 240x432 then 720x1280. Far beyond a CPU budget;
    /// kept for reference and shape checks.
    pub fn paper() -> Self {
        TrainConfig {
            model: ModelConfig::paper(),
            stages: vec![
                Stage {
                    height: 240,
                    width: 432,
                    frames: 65,
                    iterations: 500_000,
                },
                Stage {
                    height: 720,
                    width: 1280,
                    frames: 65,
                    iterations: 200_000,
                },
            ],
            batch_size: 16,
            learning_rate: 1e-5,
            ..Self::default()
        }
    }

    pub fn total_iterations(&self) -> usize {
        self.stages.iter().map(|s| s.iterations).sum()
    }

    /// Stage index and stage-local iteration for a global step.
    pub fn stage_at(&self, step: usize) -> Option<(usize, usize)> {
        let mut start = 0;
        for (i, s) in self.stages.iter().enumerate() {
            if step < start + s.iterations {
                return Some((i, step - start));
            }
            start += s.iterations;
        }
        None
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key {key:?}", n + 1)));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", n + 1)));
            }
            match key {
                "model" => cfg.model = ModelConfig::preset(value)?,
                "stages" => {
                    cfg.stages = value.split(',').map(str::parse).collect::<Result<_>>()?;
                }
                "batch_size" => cfg.batch_size = parse(key, value)?,
                "learning_rate" => cfg.learning_rate = parse(key, value)?,
                "weight_decay" => cfg.weight_decay = parse(key, value)?,
                "beta1" => cfg.beta1 = parse(key, value)?,
                "beta2" => cfg.beta2 = parse(key, value)?,
                "seed" => cfg.seed = parse(key, value)?,
                "moving_ratio" => cfg.moving_ratio = parse(key, value)?,
                "checkpoint_every" => cfg.checkpoint_every = parse(key, value)?,
                "log_every" => cfg.log_every = parse(key, value)?,
                _ => unreachable!("key list and match arms agree"),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.stages.is_empty() {
            return Err(Error::Config("at least one stage is required".into()));
        }
        for s in &self.stages {
            s.validate()?;
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be finite and non-negative".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(0.0..=1.0).contains(&self.moving_ratio) {
            return Err(Error::Config("moving_ratio must lie in [0, 1]".into()));
        }
        Ok(())
    }
}
