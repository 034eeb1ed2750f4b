//! Temporal sliding-window denoising. A long latent is cut into overlapping
//! clips of the training length; after every Euler step each global frame is
//! replaced by the mean of the clip frames that cover it.

use rayon::prelude::*;

use crate::codec::Latent;
use crate::error::{Error, Result};
use crate::flow::{euler_step, SchedulerConfig};
use crate::numerics::{sample_gaussian, RngStream, Scalar};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipPlan {
    /// Latent frames of the full sequence, `n'`.
    pub total: usize,
    /// Window length `n`.
    pub window: usize,
    pub stride: usize,
    /// Ascending clip start frames.
    pub starts: Vec<usize>,
}

impl ClipPlan {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// Frames per clip; shorter than the window when the sequence is.
    pub fn clip_len(&self) -> usize {
        self.window.min(self.total)
    }

    /// Clip indices whose range contains frame `i`.
    pub fn covering(&self, i: usize) -> Vec<usize> {
        let len = self.clip_len();
        (0..self.starts.len())
            .filter(|&k| (self.starts[k]..self.starts[k] + len).contains(&i))
            .collect()
    }
}

/// Clip starts `min(k s, n' - n)` for `k < r`, with
/// `r = ceil((n' - n) / s) + 1` when `n' > n` and a single clip otherwise.
pub fn plan_clips(total: usize, window: usize, stride: usize) -> Result<ClipPlan> {
    if total == 0 || window == 0 {
        return Err(Error::InvalidArgument(format!(
            "sequence and window must be non-empty, got n'={total} n={window}"
        )));
    }
    if stride == 0 || stride > window {
        return Err(Error::InvalidArgument(format!(
            "stride must lie in 1..={window} so clips cover every frame, got {stride}"
        )));
    }
    let starts = if total <= window {
        vec![0]
    } else {
        let r = (total - window).div_ceil(stride) + 1;
        (0..r).map(|k| (k * stride).min(total - window)).collect()
    };
    Ok(ClipPlan {
        total,
        window,
        stride,
        starts,
    })
}

/// Averages per-clip states back onto the full sequence.
pub fn fuse_step<T: Scalar>(clips: &[Latent<T>], plan: &ClipPlan) -> Result<Latent<T>> {
    if clips.len() != plan.len() {
        return Err(Error::InvalidArgument(format!(
            "plan has {} clips, got {} states",
            plan.len(),
            clips.len()
        )));
    }
    let (h, w, n, c) = clips[0].dims();
    if n != plan.clip_len() {
        return Err(Error::InvalidArgument(format!(
            "clips hold {n} frames, plan expects {}",
            plan.clip_len()
        )));
    }
    for clip in &clips[1..] {
        clips[0].same_dims(clip, "fuse step")?;
    }
    let frame = h * w * c;
    let mut sum = vec![T::ZERO; plan.total * frame];
    let mut count = vec![0usize; plan.total];
    for (clip, &start) in clips.iter().zip(&plan.starts) {
        for (dst, &v) in sum[start * frame..(start + n) * frame].iter_mut().zip(clip.data()) {
            *dst += v;
        }
        for cnt in &mut count[start..start + n] {
            *cnt += 1;
        }
    }
    for (i, &cnt) in count.iter().enumerate() {
        let inv = T::from_f64(cnt as f64);
        for v in &mut sum[i * frame..(i + 1) * frame] {
            *v /= inv;
        }
    }
    Latent::from_tensor(crate::numerics::Tensor::from_vec(&[plan.total, h, w, c], sum)?)
}

/// Sliding-window Euler sampling over a long sequence. The noise is drawn
/// once for all `n'` frames, so overlapping clips start from identical
/// states. `velocity` receives the clip index and the clip slices of the
/// state, `y'` and `m'`.
pub fn long_denoise<F>(
    velocity: F,
    y: &Latent<f32>,
    m: &Latent<f32>,
    cfg: &SchedulerConfig,
    plan: &ClipPlan,
    rng: &mut RngStream,
) -> Result<Latent<f32>>
where
    F: Fn(usize, &Latent<f32>, &Latent<f32>, &Latent<f32>, f64) -> Result<Latent<f32>> + Sync,
{
    cfg.validate()?;
    if y.frames() != plan.total || m.frames() != plan.total {
        return Err(Error::InvalidArgument(format!(
            "plan covers {} frames, latent has {} and mask {}",
            plan.total,
            y.frames(),
            m.frames()
        )));
    }
    let len = plan.clip_len();
    let ys = plan
        .starts
        .iter()
        .map(|&s| y.frames_range(s, s + len))
        .collect::<Result<Vec<_>>>()?;
    let ms = plan
        .starts
        .iter()
        .map(|&s| m.frames_range(s, s + len))
        .collect::<Result<Vec<_>>>()?;

    let noise: Latent<f32> = Latent::from_tensor(sample_gaussian(rng, y.tensor().shape())?)?;
    let mut x = noise.cast::<f64>();
    let dt = 1.0 / cfg.num_steps as f64;
    for (step, t) in cfg.grid().into_iter().enumerate() {
        let clips = plan
            .starts
            .par_iter()
            .enumerate()
            .map(|(k, &s)| {
                let mut xk = x.frames_range(s, s + len)?;
                let v = velocity(k, &xk.cast(), &ys[k], &ms[k], t)
                    .and_then(|v| euler_step(&mut xk, &v, dt, step).map(|_| xk));
                v.map_err(|e| Error::Clip {
                    index: k,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        x = fuse_step(&clips, plan)?;
    }
    Ok(x.cast())
}
