use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::{read_frames, MaskTensor, VideoTensor};
use crate::pipeline::data::video_dirs;

/// PSNR reported for identical inputs.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn check_same(pred: &VideoTensor, gt: &VideoTensor) -> Result<()> {
    if pred.tensor().shape() != gt.tensor().shape() {
        return Err(Error::ShapeMismatch {
            op: "metric",
            lhs: pred.tensor().shape().to_vec(),
            rhs: gt.tensor().shape().to_vec(),
        });
    }
    Ok(())
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// `10 log10(1 / MSE)` over all pixels and channels, for values in `[0, 1]`.
pub fn psnr(pred: &VideoTensor, gt: &VideoTensor) -> Result<f64> {
    check_same(pred, gt)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&a, &b)| ((a - b) as f64).powi(2))
        .sum();
    Ok(psnr_from_mse(sum / pred.data().len() as f64))
}

/// PSNR restricted to hole pixels; `None` if the mask is empty.
pub fn masked_psnr(pred: &VideoTensor, gt: &VideoTensor, mask: &MaskTensor) -> Result<Option<f64>> {
    check_same(pred, gt)?;
    if (mask.frames(), mask.height(), mask.width()) != (gt.frames(), gt.height(), gt.width()) {
        return Err(Error::ShapeMismatch {
            op: "masked psnr",
            lhs: gt.tensor().shape().to_vec(),
            rhs: mask.tensor().shape().to_vec(),
        });
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for ((p, g), &m) in pred
        .data()
        .chunks_exact(3)
        .zip(gt.data().chunks_exact(3))
        .zip(mask.data())
    {
        if m != 0.0 {
            sum += p.iter().zip(g).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum::<f64>();
            count += 3;
        }
    }
    Ok((count > 0).then(|| psnr_from_mse(sum / count as f64)))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = k.iter().sum();
    k.map(|v| v / total)
}

/// Separable filtering over valid positions only.
fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of one single-channel image pair.
fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> f64 {
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, k);
    let mu_b = filter_valid(b, h, w, k);
    let aa = filter_valid(&sq(a, a), h, w, k);
    let bb = filter_valid(&sq(b, b), h, w, k);
    let ab = filter_valid(&sq(a, b), h, w, k);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
    }
    total / mu_a.len() as f64
}

/// SSIM with an 11x11 Gaussian window (sigma 1.5), computed per frame and
/// per RGB channel over valid window positions, then averaged.
pub fn ssim(pred: &VideoTensor, gt: &VideoTensor) -> Result<f64> {
    check_same(pred, gt)?;
    let (h, w) = (gt.height(), gt.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let k = gaussian_kernel();
    let mut total = 0.0;
    for t in 0..gt.frames() {
        for c in 0..3 {
            let plane = |v: &VideoTensor| {
                v.frame(t)
                    .iter()
                    .skip(c)
                    .step_by(3)
                    .map(|&x| x as f64)
                    .collect::<Vec<_>>()
            };
            total += ssim_plane(&plane(pred), &plane(gt), h, w, &k);
        }
    }
    Ok(total / (3 * gt.frames()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub videos: Vec<VideoScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// `[width, height]` frames were resized to, if any.
    pub resize: Option<[usize; 2]>,
}

impl EvalReport {
    pub fn from_scores(videos: Vec<VideoScore>, resize: Option<[usize; 2]>) -> Result<Self> {
        if videos.is_empty() {
            return Err(Error::InvalidArgument("no videos to evaluate".into()));
        }
        let n = videos.len() as f64;
        let mean_psnr = videos.iter().map(|v| v.psnr).sum::<f64>() / n;
        let mean_ssim = videos.iter().map(|v| v.ssim).sum::<f64>() / n;
        Ok(EvalReport {
            videos,
            mean_psnr,
            mean_ssim,
            resize,
        })
    }
}

/// Scores every video under `pred_dir` against the same-named video under
/// `gt_dir`. A directory holding frames directly counts as one video.
/// `resize` is `(width, height)`.
pub fn evaluate(
    pred_dir: impl AsRef<Path>,
    gt_dir: impl AsRef<Path>,
    resize: Option<(usize, usize)>,
) -> Result<EvalReport> {
    let pred = video_dirs(pred_dir.as_ref())?;
    let gt = video_dirs(gt_dir.as_ref())?;
    let pred_names: Vec<&String> = pred.iter().map(|(n, _)| n).collect();
    let gt_names: Vec<&String> = gt.iter().map(|(n, _)| n).collect();
    if pred_names != gt_names {
        return Err(Error::InvalidArgument(format!(
            "prediction videos {pred_names:?} do not match ground truth {gt_names:?}"
        )));
    }
    let scores = pred
        .par_iter()
        .zip(&gt)
        .map(|((name, p), (_, g))| {
            let (mut a, mut b) = (read_frames(p)?, read_frames(g)?);
            if let Some((w, h)) = resize {
                a = a.resize(h, w)?;
                b = b.resize(h, w)?;
            }
            Ok(VideoScore {
                name: name.clone(),
                psnr: psnr(&a, &b)?,
                ssim: ssim(&a, &b)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_scores(scores, resize.map(|(w, h)| [w, h]))
}
