use std::path::Path;

use crate::codec::{downsample_mask, latent_frames, LatentCodec, WaveletCodec};
use crate::dit::{Checkpoint, Dit, DitInput};
use crate::error::{Error, Result};
use crate::flow::SchedulerConfig;
use crate::media::{apply_mask, composite, read_frames, read_masks, write_frames, MaskTensor, VideoTensor};
use crate::multidiffusion::{long_denoise, plan_clips};
use crate::numerics::RngStream;

/// Latent window used when none is given: the desk stages train on 17-frame
/// clips, i.e. 5 latent frames.
pub const DEFAULT_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InpaintOptions {
    pub steps: usize,
    /// Clip length in latent frames.
    pub window: usize,
    /// Clip stride in latent frames.
    pub stride: usize,
    pub seed: u64,
}

impl InpaintOptions {
    pub fn new(steps: usize, seed: u64) -> Self {
        InpaintOptions {
            steps,
            window: DEFAULT_WINDOW,
            stride: DEFAULT_WINDOW / 2,
            seed,
        }
    }
}

/// Fills the masked region of `video`. Pixels outside the mask are copied
/// from the input unchanged.
pub fn inpaint(dit: &Dit<f32>, video: &VideoTensor, mask: &MaskTensor, opts: &InpaintOptions) -> Result<VideoTensor> {
    if (video.frames(), video.height(), video.width()) != (mask.frames(), mask.height(), mask.width()) {
        return Err(Error::InvalidArgument(format!(
            "video is {}x{}x{} but mask is {}x{}x{}",
            video.frames(),
            video.height(),
            video.width(),
            mask.frames(),
            mask.height(),
            mask.width()
        )));
    }
    let masked = apply_mask(video, mask)?;
    let y = WaveletCodec.encode(&masked)?;
    let m = downsample_mask(mask)?;
    let plan = plan_clips(latent_frames(video.frames()), opts.window, opts.stride)?;
    let sched = SchedulerConfig::with_steps(opts.steps);
    let mut rng = RngStream::new(opts.seed, 0);
    let latent = long_denoise(
        |_, x, y, m, t| dit.forward(&DitInput { x_t: x, y, mask: m, t }),
        &y,
        &m,
        &sched,
        &plan,
        &mut rng,
    )?;
    let generated = WaveletCodec.decode(&latent)?;
    composite(video, &generated, mask)
}

/// Directory-level inpainting as exposed on the command line.
pub fn inpaint_dirs(
    ckpt: impl AsRef<Path>,
    video_dir: impl AsRef<Path>,
    mask_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    opts: &InpaintOptions,
) -> Result<VideoTensor> {
    let ck = Checkpoint::load(ckpt)?;
    let dit = Dit::new(ck.config, ck.params)?;
    let video = read_frames(video_dir)?;
    let mask = read_masks(mask_dir)?;
    let out = inpaint(&dit, &video, &mask, opts)?;
    write_frames(&out, out_dir)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dit::ModelConfig;
    use crate::media::{gen_synthetic_video, MaskTensor};

    fn model() -> Dit<f32> {
        let cfg = ModelConfig {
            num_blocks: 1,
            num_heads: 2,
            head_dim: 8,
            ..ModelConfig::tiny()
        };
        Dit::init(cfg, &mut RngStream::new(0, 0)).unwrap()
    }

    #[test]
    fn empty_mask_returns_input() {
        let video = gen_synthetic_video(&mut RngStream::new(1, 0), 16, 32, 9, 2).unwrap();
        let mask = MaskTensor::zeros(9, 16, 32).unwrap();
        let out = inpaint(&model(), &video, &mask, &InpaintOptions::new(4, 0)).unwrap();
        assert_eq!(out, video);
    }

    #[test]
    fn deterministic_and_in_range() {
        let video = gen_synthetic_video(&mut RngStream::new(2, 0), 16, 16, 9, 2).unwrap();
        let mask = MaskTensor::from_fn(9, 16, 16, |_, y, x| (4..12).contains(&y) && (4..12).contains(&x)).unwrap();
        let opts = InpaintOptions {
            window: 2,
            stride: 1,
            ..InpaintOptions::new(4, 7)
        };
        let a = inpaint(&model(), &video, &mask, &opts).unwrap();
        assert_eq!(a, inpaint(&model(), &video, &mask, &opts).unwrap());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn misaligned_inputs_rejected() {
        let video = gen_synthetic_video(&mut RngStream::new(2, 0), 16, 16, 9, 2).unwrap();
        let mask = MaskTensor::zeros(5, 16, 16).unwrap();
        assert!(inpaint(&model(), &video, &mask, &InpaintOptions::new(4, 0)).is_err());
    }
}
