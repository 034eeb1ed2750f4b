use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Pixel value written into holes before encoding; maps to zero in the
/// codec's `[-1, 1]` range.
pub const HOLE_FILL: f32 = 0.5;

pub(crate) fn check_frame_count(frames: usize) -> Result<()> {
    if frames % 4 != 1 {
        return Err(Error::InvalidArgument(format!(
            "frame count must be 4k+1, got {frames}"
        )));
    }
    Ok(())
}

/// RGB video with values in `[0, 1]`, stored frame-major as
/// `[frames, height, width, 3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    tensor: Tensor<f32>,
}

impl VideoTensor {
    pub fn from_tensor(tensor: Tensor<f32>) -> Result<Self> {
        let &[frames, _, _, 3] = tensor.shape() else {
            return Err(Error::invalid_shape(
                tensor.shape(),
                "video must be [frames, height, width, 3]",
            ));
        };
        check_frame_count(frames)?;
        if let Some(v) = tensor.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(VideoTensor { tensor })
    }

    pub fn from_fn(
        frames: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> [f32; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(frames * height * width * 3);
        for t in 0..frames {
            for y in 0..height {
                for x in 0..width {
                    data.extend(f(t, y, x));
                }
            }
        }
        Self::from_tensor(Tensor::from_vec(&[frames, height, width, 3], data)?)
    }

    pub fn constant(frames: usize, height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        Self::from_fn(frames, height, width, |_, _, _| rgb)
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

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.tensor
    }

    pub fn data(&self) -> &[f32] {
        self.tensor.data()
    }

    #[inline]
    pub fn pixel(&self, t: usize, y: usize, x: usize) -> [f32; 3] {
        let i = ((t * self.height() + y) * self.width() + x) * 3;
        let d = self.tensor.data();
        [d[i], d[i + 1], d[i + 2]]
    }

    /// Frame `t` as a `height x width x 3` slice.
    pub fn frame(&self, t: usize) -> &[f32] {
        let len = self.height() * self.width() * 3;
        &self.tensor.data()[t * len..(t + 1) * len]
    }

    /// Bilinear resize of every frame with half-pixel sample centers.
    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("resize target must be non-empty".into()));
        }
        if height == self.height() && width == self.width() {
            return Ok(self.clone());
        }
        let taps = |dst: usize, src: usize| -> Vec<(usize, usize, f32)> {
            (0..dst)
                .map(|i| {
                    let pos = ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
                    let lo = pos.floor() as usize;
                    let hi = (lo + 1).min(src - 1);
                    (lo, hi, (pos - lo as f64) as f32)
                })
                .collect()
        };
        let ys = taps(height, self.height());
        let xs = taps(width, self.width());
        Self::from_fn(self.frames(), height, width, |t, y, x| {
            let (y0, y1, fy) = ys[y];
            let (x0, x1, fx) = xs[x];
            let mut out = [0.0; 3];
            for (c, o) in out.iter_mut().enumerate() {
                let p = |yy, xx| self.pixel(t, yy, xx)[c];
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                *o = (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0);
            }
            out
        })
    }
}

/// Binary hole indicator (1 = missing), stored as `[frames, height, width, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskTensor {
    tensor: Tensor<f32>,
}

impl MaskTensor {
    pub fn from_tensor(tensor: Tensor<f32>) -> Result<Self> {
        let &[frames, _, _, 1] = tensor.shape() else {
            return Err(Error::invalid_shape(
                tensor.shape(),
                "mask must be [frames, height, width, 1]",
            ));
        };
        check_frame_count(frames)?;
        if tensor.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument("mask values must be 0 or 1".into()));
        }
        Ok(MaskTensor { tensor })
    }

    pub fn from_fn(
        frames: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> bool,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(frames * height * width);
        for t in 0..frames {
            for y in 0..height {
                for x in 0..width {
                    data.push(if f(t, y, x) { 1.0 } else { 0.0 });
                }
            }
        }
        Self::from_tensor(Tensor::from_vec(&[frames, height, width, 1], data)?)
    }

    pub fn zeros(frames: usize, height: usize, width: usize) -> Result<Self> {
        Self::from_fn(frames, height, width, |_, _, _| false)
    }

    pub fn ones(frames: usize, height: usize, width: usize) -> Result<Self> {
        Self::from_fn(frames, height, width, |_, _, _| true)
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

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.tensor
    }

    pub fn data(&self) -> &[f32] {
        self.tensor.data()
    }

    #[inline]
    pub fn is_hole(&self, t: usize, y: usize, x: usize) -> bool {
        self.tensor.data()[(t * self.height() + y) * self.width() + x] != 0.0
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let len = self.height() * self.width();
        &self.tensor.data()[t * len..(t + 1) * len]
    }

    /// Fraction of frame `t` covered by holes.
    pub fn coverage(&self, t: usize) -> f64 {
        let f = self.frame(t);
        f.iter().map(|&v| v as f64).sum::<f64>() / f.len() as f64
    }

    pub(crate) fn matches(&self, video: &VideoTensor) -> Result<()> {
        let dims = [self.frames(), self.height(), self.width()];
        let vdims = [video.frames(), video.height(), video.width()];
        if dims != vdims {
            return Err(Error::ShapeMismatch {
                op: "mask/video",
                lhs: vdims.to_vec(),
                rhs: dims.to_vec(),
            });
        }
        Ok(())
    }
}

/// Replaces hole pixels with [`HOLE_FILL`].
pub fn apply_mask(video: &VideoTensor, mask: &MaskTensor) -> Result<VideoTensor> {
    mask.matches(video)?;
    let mut data = video.data().to_vec();
    for (px, &m) in data.chunks_exact_mut(3).zip(mask.data()) {
        if m != 0.0 {
            px.fill(HOLE_FILL);
        }
    }
    Ok(VideoTensor {
        tensor: Tensor::from_vec(video.tensor.shape(), data)?,
    })
}

/// `mask * generated + (1 - mask) * original`, so pixels outside holes are
/// copied bit-for-bit from `original`.
pub fn composite(original: &VideoTensor, generated: &VideoTensor, mask: &MaskTensor) -> Result<VideoTensor> {
    mask.matches(original)?;
    mask.matches(generated)?;
    let mut data = original.data().to_vec();
    for ((px, gen), &m) in data
        .chunks_exact_mut(3)
        .zip(generated.data().chunks_exact(3))
        .zip(mask.data())
    {
        if m != 0.0 {
            px.copy_from_slice(gen);
        }
    }
    Ok(VideoTensor {
        tensor: Tensor::from_vec(original.tensor.shape(), data)?,
    })
}
