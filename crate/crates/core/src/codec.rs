//! Latent codec: 8x spatial and 4x temporal compression into 8 channels.
//!
//! Frames are grouped temporally as `{0}, {1..4}, {5..8}, ...`, giving
//! `n = (N - 1) / 4 + 1` latent frames, and spatially into 8x8 blocks. Working
//! in the normalized range `r = 2p - 1`, each latent cell holds
//!
//! | channels | content                                                     |
//! |----------|-------------------------------------------------------------|
//! | 0..3     | RGB mean over the block and group                           |
//! | 3..6     | RGB mean frame-to-frame difference in the group (0 for `{0}`)|
//! | 6, 7     | mean horizontal / vertical luma step inside the block       |
//!
//! Decoding interpolates the means bilinearly (extrapolating linearly at the
//! borders), adds a per-block luma ramp for whatever slope the interpolation
//! does not already explain, and adds a per-group temporal ramp. Every stage
//! is linear, so constant and affine videos survive a round trip exactly.

use crate::error::{Error, Result};
use crate::media::{MaskTensor, VideoTensor};
use crate::numerics::{Scalar, Tensor};

pub const LATENT_CHANNELS: usize = 8;
pub const MASK_CHANNELS: usize = 4;
pub const SPATIAL_FACTOR: usize = 8;
pub const TEMPORAL_FACTOR: usize = 4;

const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Latent grid stored frame-major as `[n, h, w, c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent<T: Scalar = f32> {
    tensor: Tensor<T>,
}

impl<T: Scalar> Latent<T> {
    pub fn from_tensor(tensor: Tensor<T>) -> Result<Self> {
        if tensor.rank() != 4 {
            return Err(Error::invalid_shape(
                tensor.shape(),
                "latent must be [frames, height, width, channels]",
            ));
        }
        Ok(Latent { tensor })
    }

    pub fn zeros(frames: usize, height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::from_tensor(Tensor::zeros(&[frames, height, width, channels])?)
    }

    pub fn frames(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[3]
    }

    /// `(h, w, n, c)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.height(), self.width(), self.frames(), self.channels())
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor<T> {
        &mut self.tensor
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.tensor
    }

    pub fn data(&self) -> &[T] {
        self.tensor.data()
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        self.tensor.data_mut()
    }

    pub fn cast<U: Scalar>(&self) -> Latent<U> {
        Latent {
            tensor: self.tensor.cast(),
        }
    }

    /// Latent frames `start..end`.
    pub fn frames_range(&self, start: usize, end: usize) -> Result<Self> {
        Self::from_tensor(self.tensor.slice(0, start, end)?)
    }

    /// Elements in one latent frame.
    pub fn frame_len(&self) -> usize {
        self.height() * self.width() * self.channels()
    }

    pub fn same_dims(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.tensor.shape() != other.tensor.shape() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.tensor.shape().to_vec(),
                rhs: other.tensor.shape().to_vec(),
            });
        }
        Ok(())
    }
}

/// Encoder/decoder pair between pixel videos and latents.
pub trait LatentCodec: Send + Sync {
    fn encode(&self, video: &VideoTensor) -> Result<Latent<f32>>;
    fn decode(&self, latent: &Latent<f32>) -> Result<VideoTensor>;
}

/// The fixed means/differences/gradients codec described in the module docs.
#[derive(Debug, Clone, Copy, Default)]
pub struct WaveletCodec;

fn check_video_dims(frames: usize, height: usize, width: usize) -> Result<()> {
    if !height.is_multiple_of(SPATIAL_FACTOR) || !width.is_multiple_of(SPATIAL_FACTOR) {
        return Err(Error::InvalidArgument(format!(
            "frame size {height}x{width} is not divisible by {SPATIAL_FACTOR}"
        )));
    }
    if frames % TEMPORAL_FACTOR != 1 {
        return Err(Error::InvalidArgument(format!(
            "frame count must be 4k+1, got {frames}"
        )));
    }
    Ok(())
}

/// Latent frame count for `frames` video frames.
pub fn latent_frames(frames: usize) -> usize {
    (frames - 1) / TEMPORAL_FACTOR + 1
}

/// Video frame count for `latent` latent frames.
pub fn video_frames(latent: usize) -> usize {
    TEMPORAL_FACTOR * (latent - 1) + 1
}

/// Video frames belonging to latent frame `g`.
fn group(g: usize) -> std::ops::Range<usize> {
    if g == 0 {
        0..1
    } else {
        let start = TEMPORAL_FACTOR * (g - 1) + 1;
        start..start + TEMPORAL_FACTOR
    }
}

impl WaveletCodec {
    /// Decode without the final clamp to `[0, 1]`; shape `[N, H, W, 3]`.
    pub fn decode_unclamped(&self, latent: &Latent<f32>) -> Result<Tensor<f32>> {
        if latent.channels() != LATENT_CHANNELS {
            return Err(Error::invalid_shape(
                latent.tensor().shape(),
                format!("latent must have {LATENT_CHANNELS} channels"),
            ));
        }
        let (h, w, n, _) = latent.dims();
        let (big_h, big_w, big_n) = (h * SPATIAL_FACTOR, w * SPATIAL_FACTOR, video_frames(n));
        let cell = |g: usize, i: usize, j: usize| {
            let at = ((g * h + i) * w + j) * LATENT_CHANNELS;
            &latent.data()[at..at + LATENT_CHANNELS]
        };
        let luma = |g: usize, i: usize, j: usize| {
            let c = cell(g, i, j);
            LUMA[0] * c[0] + LUMA[1] * c[1] + LUMA[2] * c[2]
        };

        // Interpolation taps along one axis: (lo block, hi block, weight on hi),
        // with weights outside [0, 1] at the borders (linear extrapolation).
        let taps = |blocks: usize| -> Vec<(usize, usize, f32)> {
            (0..blocks * SPATIAL_FACTOR)
                .map(|p| {
                    if blocks == 1 {
                        return (0, 0, 0.0);
                    }
                    let u = (p as f32 + 0.5) / SPATIAL_FACTOR as f32 - 0.5;
                    let lo = (u.floor().max(0.0) as usize).min(blocks - 2);
                    (lo, lo + 1, u - lo as f32)
                })
                .collect()
        };
        let ys = taps(h);
        let xs = taps(w);
        // Slope of the interpolated luma across a block, per pixel.
        let base_slope = |g: usize, i: usize, j: usize, horizontal: bool| -> f32 {
            let (idx, len) = if horizontal { (j, w) } else { (i, h) };
            if len == 1 {
                return 0.0;
            }
            let at = |k: usize| if horizontal { luma(g, i, k) } else { luma(g, k, j) };
            let (a, b) = (idx.saturating_sub(1), (idx + 1).min(len - 1));
            (at(b) - at(a)) / ((b - a) * SPATIAL_FACTOR) as f32
        };

        let half = (SPATIAL_FACTOR as f32 - 1.0) / 2.0;
        let mid_group = (TEMPORAL_FACTOR as f32 - 1.0) / 2.0;
        let mut out = vec![0.0f32; big_n * big_h * big_w * 3];
        for g in 0..n {
            // Per-block luma ramp corrections for this group.
            let mut ramp = vec![(0.0f32, 0.0f32); h * w];
            for i in 0..h {
                for j in 0..w {
                    let c = cell(g, i, j);
                    ramp[i * w + j] = (c[6] - base_slope(g, i, j, true), c[7] - base_slope(g, i, j, false));
                }
            }
            for y in 0..big_h {
                let (y0, y1, fy) = ys[y];
                let bi = y / SPATIAL_FACTOR;
                let dy = (y % SPATIAL_FACTOR) as f32 - half;
                for x in 0..big_w {
                    let (x0, x1, fx) = xs[x];
                    let bj = x / SPATIAL_FACTOR;
                    let dx = (x % SPATIAL_FACTOR) as f32 - half;
                    let (rx, ry) = ramp[bi * w + bj];
                    let spatial = rx * dx + ry * dy;
                    let own = cell(g, bi, bj);
                    let mut base = [0.0f32; 3];
                    for (ch, b) in base.iter_mut().enumerate() {
                        let top = cell(g, y0, x0)[ch] * (1.0 - fx) + cell(g, y0, x1)[ch] * fx;
                        let bottom = cell(g, y1, x0)[ch] * (1.0 - fx) + cell(g, y1, x1)[ch] * fx;
                        *b = top * (1.0 - fy) + bottom * fy + spatial;
                    }
                    for (k, t) in group(g).enumerate() {
                        let offset = if g == 0 { 0.0 } else { k as f32 - mid_group };
                        let at = ((t * big_h + y) * big_w + x) * 3;
                        for ch in 0..3 {
                            let r = base[ch] + own[3 + ch] * offset;
                            out[at + ch] = r * 0.5 + 0.5;
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[big_n, big_h, big_w, 3], out)
    }
}

impl LatentCodec for WaveletCodec {
    fn encode(&self, video: &VideoTensor) -> Result<Latent<f32>> {
        let (big_n, big_h, big_w) = (video.frames(), video.height(), video.width());
        check_video_dims(big_n, big_h, big_w)?;
        let (h, w, n) = (big_h / SPATIAL_FACTOR, big_w / SPATIAL_FACTOR, latent_frames(big_n));
        let norm = |p: f32| 2.0 * p - 1.0;
        let lum = |px: [f32; 3]| LUMA[0] * norm(px[0]) + LUMA[1] * norm(px[1]) + LUMA[2] * norm(px[2]);
        let block_mean = |t: usize, i: usize, j: usize| -> [f32; 3] {
            let mut acc = [0.0f32; 3];
            for y in i * SPATIAL_FACTOR..(i + 1) * SPATIAL_FACTOR {
                for x in j * SPATIAL_FACTOR..(j + 1) * SPATIAL_FACTOR {
                    let px = video.pixel(t, y, x);
                    for c in 0..3 {
                        acc[c] += norm(px[c]);
                    }
                }
            }
            acc.map(|v| v / (SPATIAL_FACTOR * SPATIAL_FACTOR) as f32)
        };

        let steps = (SPATIAL_FACTOR * (SPATIAL_FACTOR - 1)) as f32;
        let mut data = Vec::with_capacity(n * h * w * LATENT_CHANNELS);
        for g in 0..n {
            let frames = group(g);
            let count = frames.len() as f32;
            for i in 0..h {
                for j in 0..w {
                    let means: Vec<[f32; 3]> = frames.clone().map(|t| block_mean(t, i, j)).collect();
                    let mut cellv = [0.0f32; LATENT_CHANNELS];
                    for c in 0..3 {
                        cellv[c] = means.iter().map(|m| m[c]).sum::<f32>() / count;
                        if means.len() > 1 {
                            cellv[3 + c] = (means[means.len() - 1][c] - means[0][c]) / (means.len() - 1) as f32;
                        }
                    }
                    let (mut gx, mut gy) = (0.0f32, 0.0f32);
                    for t in frames.clone() {
                        for a in 0..SPATIAL_FACTOR {
                            for b in 0..SPATIAL_FACTOR - 1 {
                                let (y, x) = (i * SPATIAL_FACTOR + a, j * SPATIAL_FACTOR + b);
                                gx += lum(video.pixel(t, y, x + 1)) - lum(video.pixel(t, y, x));
                                let (y, x) = (i * SPATIAL_FACTOR + b, j * SPATIAL_FACTOR + a);
                                gy += lum(video.pixel(t, y + 1, x)) - lum(video.pixel(t, y, x));
                            }
                        }
                    }
                    cellv[6] = gx / (steps * count);
                    cellv[7] = gy / (steps * count);
                    data.extend_from_slice(&cellv);
                }
            }
        }
        Latent::from_tensor(Tensor::from_vec(&[n, h, w, LATENT_CHANNELS], data)?)
    }

    fn decode(&self, latent: &Latent<f32>) -> Result<VideoTensor> {
        let raw = self.decode_unclamped(latent)?;
        VideoTensor::from_tensor(raw.map(|p| if p.is_nan() { 0.5 } else { p.clamp(0.0, 1.0) }))
    }
}

/// Average-pools each 8x8 block of the mask. Latent frame 0 carries video
/// frame 0 in all four channels; latent frame `j >= 1` carries video frames
/// `4(j-1)+1 ..= 4(j-1)+4` in channels 0..4.
pub fn downsample_mask(mask: &MaskTensor) -> Result<Latent<f32>> {
    let (big_n, big_h, big_w) = (mask.frames(), mask.height(), mask.width());
    check_video_dims(big_n, big_h, big_w)?;
    let (h, w, n) = (big_h / SPATIAL_FACTOR, big_w / SPATIAL_FACTOR, latent_frames(big_n));
    let area = (SPATIAL_FACTOR * SPATIAL_FACTOR) as f32;
    let pooled = |t: usize, i: usize, j: usize| -> f32 {
        let mut acc = 0.0;
        for y in i * SPATIAL_FACTOR..(i + 1) * SPATIAL_FACTOR {
            for x in j * SPATIAL_FACTOR..(j + 1) * SPATIAL_FACTOR {
                if mask.is_hole(t, y, x) {
                    acc += 1.0;
                }
            }
        }
        acc / area
    };
    let mut data = Vec::with_capacity(n * h * w * MASK_CHANNELS);
    for g in 0..n {
        for i in 0..h {
            for j in 0..w {
                if g == 0 {
                    data.extend([pooled(0, i, j); MASK_CHANNELS]);
                } else {
                    data.extend(group(g).map(|t| pooled(t, i, j)));
                }
            }
        }
    }
    Latent::from_tensor(Tensor::from_vec(&[n, h, w, MASK_CHANNELS], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    #[test]
    fn paper_shape_contract() {
        let v = VideoTensor::constant(65, 64, 64, [0.3; 3]).unwrap();
        assert_eq!(WaveletCodec.encode(&v).unwrap().dims(), (8, 8, 17, 8));
        let m = MaskTensor::zeros(65, 64, 64).unwrap();
        assert_eq!(downsample_mask(&m).unwrap().dims(), (8, 8, 17, 4));
    }

    #[test]
    fn evaluation_resolution_shapes() {
        let v = VideoTensor::constant(5, 432, 240, [0.3; 3]).unwrap();
        let (h, w, n, _) = WaveletCodec.encode(&v).unwrap().dims();
        assert_eq!((h, w, n), (54, 30, 2));
    }

    #[test]
    fn mid_gray_encodes_to_zero() {
        let v = VideoTensor::constant(9, 16, 16, [0.5; 3]).unwrap();
        let z = WaveletCodec.encode(&v).unwrap();
        assert!(z.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn constant_video_roundtrips() {
        let v = VideoTensor::constant(9, 24, 16, [0.2, 0.7, 0.9]).unwrap();
        let back = WaveletCodec.decode(&WaveletCodec.encode(&v).unwrap()).unwrap();
        assert!(back.tensor().max_abs_diff(v.tensor()).unwrap() <= 1e-6);
    }

    #[test]
    fn zero_latent_decodes_to_mid_gray() {
        let z = Latent::zeros(3, 2, 2, LATENT_CHANNELS).unwrap();
        let v = WaveletCodec.decode(&z).unwrap();
        assert_eq!((v.frames(), v.height(), v.width()), (9, 16, 16));
        assert!(v.data().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn indivisible_dims_rejected() {
        let v = VideoTensor::constant(5, 12, 16, [0.5; 3]).unwrap();
        assert!(WaveletCodec.encode(&v).is_err());
        let m = MaskTensor::zeros(5, 16, 20).unwrap();
        assert!(downsample_mask(&m).is_err());
        let bad = Latent::<f32>::zeros(2, 2, 2, 4).unwrap();
        assert!(WaveletCodec.decode(&bad).is_err());
    }

    #[test]
    fn encoder_output_is_bounded() {
        let mut rng = RngStream::new(0, 0);
        let v = VideoTensor::from_fn(9, 16, 16, |_, _, _| {
            let b = if rng.uniform() < 0.5 { 0.0 } else { 1.0 };
            [b, 1.0 - b, b]
        })
        .unwrap();
        let z = WaveletCodec.encode(&v).unwrap();
        assert!(z.data().iter().all(|&x| (-2.0..=2.0).contains(&x)));
    }

    #[test]
    fn mask_frame_to_channel_mapping_by_enumeration() {
        let frames = 17;
        for active in 1..frames {
            let m = MaskTensor::from_fn(frames, 16, 16, |t, _, _| t == active).unwrap();
            let lm = downsample_mask(&m).unwrap();
            // Brute force: find every nonzero (latent frame, channel).
            let mut hits = Vec::new();
            for j in 0..lm.frames() {
                for k in 0..MASK_CHANNELS {
                    if lm.data()[j * lm.frame_len() + k] != 0.0 {
                        hits.push((j, k));
                    }
                }
            }
            let expected = ((active - 1) / 4 + 1, (active - 1) % 4);
            assert_eq!(hits, vec![expected], "video frame {active}");
        }
        // Frame 5 lands in latent frame 2, channel 0.
        let m = MaskTensor::from_fn(frames, 16, 16, |t, _, _| t == 5).unwrap();
        let lm = downsample_mask(&m).unwrap();
        assert_eq!(lm.data()[2 * lm.frame_len()], 1.0);
    }

    #[test]
    fn frame_zero_mask_replicated() {
        let m = MaskTensor::from_fn(5, 8, 8, |t, y, _| t == 0 && y < 2).unwrap();
        let lm = downsample_mask(&m).unwrap();
        assert_eq!(&lm.data()[..4], &[0.25; 4]);
        assert!(lm.data()[4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_ones_mask() {
        let lm = downsample_mask(&MaskTensor::ones(9, 16, 8).unwrap()).unwrap();
        assert!(lm.data().iter().all(|&v| v == 1.0));
    }
}
