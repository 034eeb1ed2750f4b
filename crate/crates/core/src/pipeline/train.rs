use rayon::prelude::*;

use crate::codec::{downsample_mask, Latent, LatentCodec, WaveletCodec};
use crate::dit::{Checkpoint, Dit, DitInput};
use crate::error::{Error, Result};
use crate::flow::{interpolate, sample_timestep, velocity_target, SchedulerConfig};
use crate::media::{apply_mask, gen_masks, MaskSpec};
use crate::numerics::{sample_gaussian, RngStream};
use crate::pipeline::config::{Stage, TrainConfig};
use crate::pipeline::data::DataSource;
use crate::pipeline::optim::AdamW;

/// One training example in latent space.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub x_t: Latent<f32>,
    pub y: Latent<f32>,
    pub mask: Latent<f32>,
    pub t: f64,
    pub target: Latent<f32>,
}

impl TrainSample {
    pub fn input(&self) -> DitInput<'_, f32> {
        DitInput {
            x_t: &self.x_t,
            y: &self.y,
            mask: &self.mask,
            t: self.t,
        }
    }
}

/// Draws a clip and a mask, encodes both, and noises the clean latent at a
/// logit-normal timestep.
pub fn prepare_sample(
    source: &dyn DataSource,
    stage: &Stage,
    moving_ratio: f64,
    rng: &mut RngStream,
) -> Result<TrainSample> {
    let video = source.sample(rng, stage.height, stage.width, stage.frames)?;
    let spec = if rng.uniform() < moving_ratio {
        MaskSpec::moving()
    } else {
        MaskSpec::stationary()
    };
    let mask = gen_masks(rng, stage.height, stage.width, stage.frames, &spec)?;
    let x1 = WaveletCodec.encode(&video)?;
    let y = WaveletCodec.encode(&apply_mask(&video, &mask)?)?;
    let m = downsample_mask(&mask)?;
    let t = sample_timestep(rng, &SchedulerConfig::default());
    let x0 = Latent::from_tensor(sample_gaussian(rng, x1.tensor().shape())?)?;
    Ok(TrainSample {
        x_t: interpolate(&x0, &x1, t)?,
        y,
        mask: m,
        t,
        target: velocity_target(&x0, &x1)?,
    })
}

#[derive(Debug)]
pub enum TrainEvent<'a> {
    /// Emitted after every update; `step` counts completed updates.
    Step { step: usize, stage: usize, loss: f64 },
    /// Emitted every `checkpoint_every` updates and after the last one.
    Checkpoint { step: usize, checkpoint: &'a Checkpoint },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Loss of each update run in this call, in order.
    pub losses: Vec<f64>,
    /// Global step of the first entry in `losses`.
    pub first_step: usize,
}

/// Runs every remaining stage of `cfg`. With `resume`, training continues
/// from the checkpoint's step with its parameters and optimizer moments.
pub fn train(
    cfg: &TrainConfig,
    source: &dyn DataSource,
    resume: Option<Checkpoint>,
    mut observe: impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed, 0);
    let mut opt = AdamW::new(&cfg.model, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.weight_decay)?;
    let (mut dit, start) = match resume {
        Some(ck) => {
            if ck.config != cfg.model {
                return Err(Error::Config(
                    "checkpoint model config differs from the training config".into(),
                ));
            }
            if let Some((m, v)) = ck.moments {
                opt.m = m;
                opt.v = v;
            }
            opt.step = ck.step;
            (Dit::new(ck.config, ck.params)?, ck.step as usize)
        }
        None => (Dit::init(cfg.model.clone(), &mut root.child(u64::MAX))?, 0),
    };
    let total = cfg.total_iterations();
    if start > total {
        return Err(Error::Config(format!(
            "checkpoint is at step {start}, past the configured {total} iterations"
        )));
    }

    let snapshot = |dit: &Dit<f32>, opt: &AdamW, step: usize| Checkpoint {
        config: cfg.model.clone(),
        step: step as u64,
        params: dit.params().clone(),
        moments: Some((opt.m.clone(), opt.v.clone())),
    };
    let mut losses = Vec::with_capacity(total - start);
    for step in start..total {
        let (si, _) = cfg.stage_at(step).expect("step below total");
        let stage = cfg.stages[si];
        let iter_rng = root.child(step as u64);
        let samples: Vec<TrainSample> = (0..cfg.batch_size)
            .into_par_iter()
            .map(|b| prepare_sample(source, &stage, cfg.moving_ratio, &mut iter_rng.child(b as u64)))
            .collect::<Result<_>>()?;
        let batch: Vec<_> = samples.iter().map(|s| (s.input(), &s.target)).collect();
        let (loss, grads) = dit.batch_loss_and_grad(&batch).map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} at iteration {step}")),
            other => other,
        })?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at iteration {step}")));
        }
        opt.update(dit.params_mut(), &grads);
        losses.push(loss);
        let done = step + 1;
        observe(TrainEvent::Step {
            step: done,
            stage: si,
            loss,
        })?;
        if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) || done == total {
            let ck = snapshot(&dit, &opt, done);
            observe(TrainEvent::Checkpoint {
                step: done,
                checkpoint: &ck,
            })?;
        }
    }
    Ok(TrainOutcome {
        checkpoint: snapshot(&dit, &opt, total),
        losses,
        first_step: start,
    })
}

/// Mean of the `window` losses ending at 1-based iteration `at`.
pub fn smoothed_loss(losses: &[f64], at: usize, window: usize) -> Option<f64> {
    if window == 0 || at < window || at > losses.len() {
        return None;
    }
    let slice = &losses[at - window..at];
    Some(slice.iter().sum::<f64>() / window as f64)
}
