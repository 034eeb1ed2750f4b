//! Random training masks: rectangles and round-capped brush strokes, either
//! frozen for the whole clip or drifting on a clamped random walk.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::video::check_frame_count;
use crate::media::MaskTensor;
use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Stationary,
    Moving,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub kind: MaskKind,
    /// Number of shapes per mask.
    pub count: usize,
    /// Per-shape area as a fraction of the frame, `(min, max)`.
    pub size_range: (f64, f64),
    /// Random-walk step in pixels per frame; ignored for stationary masks.
    pub drift: f64,
    /// Probability that a shape is a brush stroke rather than a rectangle.
    pub stroke_prob: f64,
    /// Mixed into the caller's stream so two specs on one stream differ.
    pub seed: u64,
}

impl MaskSpec {
    pub fn stationary() -> Self {
        MaskSpec {
            kind: MaskKind::Stationary,
            count: 2,
            size_range: (0.02, 0.12),
            drift: 0.0,
            stroke_prob: 0.5,
            seed: 0,
        }
    }

    pub fn moving() -> Self {
        MaskSpec {
            kind: MaskKind::Moving,
            drift: 1.5,
            ..Self::stationary()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.size_range;
        if !(lo > 0.0 && lo <= hi && hi <= 0.5) {
            return Err(Error::Config(format!(
                "mask size range must satisfy 0 < min <= max <= 0.5, got ({lo}, {hi})"
            )));
        }
        if !(self.drift >= 0.0 && self.drift.is_finite()) {
            return Err(Error::Config(format!("mask drift must be >= 0, got {}", self.drift)));
        }
        if !(0.0..=1.0).contains(&self.stroke_prob) {
            return Err(Error::Config(format!(
                "stroke probability must lie in [0, 1], got {}",
                self.stroke_prob
            )));
        }
        Ok(())
    }
}

/// Pixel footprint relative to an anchor, with its bounding box.
struct Footprint {
    cells: Vec<(i64, i64)>,
    width: i64,
    height: i64,
}

fn rectangle(rng: &mut RngStream, area: f64, h: usize, w: usize) -> Footprint {
    // Split the area fraction between the two sides so both stay <= 1.
    let fw = rng.uniform_range(area, 1.0).min(1.0);
    let fh = (area / fw).min(1.0);
    let rw = ((fw * w as f64).round() as i64).clamp(1, w as i64);
    let rh = ((fh * h as f64).round() as i64).clamp(1, h as i64);
    let cells = (0..rh).flat_map(|y| (0..rw).map(move |x| (y, x))).collect();
    Footprint {
        cells,
        width: rw,
        height: rh,
    }
}

fn stroke(rng: &mut RngStream, area: f64, h: usize, w: usize) -> Footprint {
    let pixels = area * (h * w) as f64;
    let radius = (pixels.sqrt() / 4.0).max(1.0);
    let length = (pixels / (2.0 * radius)).max(radius);
    let segments = 2 + rng.below(3);
    let step = length / segments as f64;

    let mut pts = vec![(0.0f64, 0.0f64)];
    let mut heading = rng.uniform_range(0.0, std::f64::consts::TAU);
    for _ in 0..segments {
        heading += rng.uniform_range(-1.2, 1.2);
        let &(y, x) = pts.last().unwrap();
        pts.push((y + step * heading.sin(), x + step * heading.cos()));
    }

    let min_y = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min) - radius;
    let min_x = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min) - radius;
    let max_y = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max) + radius;
    let max_x = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max) + radius;
    let bh = ((max_y - min_y).ceil() as i64).clamp(1, h as i64);
    let bw = ((max_x - min_x).ceil() as i64).clamp(1, w as i64);

    let dist2 = |py: f64, px: f64, a: (f64, f64), b: (f64, f64)| {
        let (dy, dx) = (b.0 - a.0, b.1 - a.1);
        let len2 = dy * dy + dx * dx;
        let s = if len2 > 0.0 {
            (((py - a.0) * dy + (px - a.1) * dx) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (ey, ex) = (py - a.0 - s * dy, px - a.1 - s * dx);
        ey * ey + ex * ex
    };
    let mut cells = Vec::new();
    for y in 0..bh {
        for x in 0..bw {
            let (py, px) = (min_y + y as f64 + 0.5, min_x + x as f64 + 0.5);
            if pts
                .windows(2)
                .any(|seg| dist2(py, px, seg[0], seg[1]) <= radius * radius)
            {
                cells.push((y, x));
            }
        }
    }
    Footprint {
        cells,
        width: bw,
        height: bh,
    }
}

/// Random mask video. Stationary masks repeat frame 0; moving masks translate
/// each shape by a random walk of step `drift`, clamped to keep the shape's
/// bounding box inside the frame.
pub fn gen_masks(
    rng: &mut RngStream,
    height: usize,
    width: usize,
    frames: usize,
    spec: &MaskSpec,
) -> Result<MaskTensor> {
    spec.validate()?;
    check_frame_count(frames)?;
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("mask frame must be non-empty".into()));
    }
    let mut rng = rng.child(spec.seed);
    let (lo, hi) = spec.size_range;

    struct Walker {
        shape: Footprint,
        pos: (f64, f64),
    }
    let mut walkers: Vec<Walker> = (0..spec.count)
        .map(|_| {
            let area = rng.uniform_range(lo, hi.max(lo));
            let shape = if rng.uniform() < spec.stroke_prob {
                stroke(&mut rng, area, height, width)
            } else {
                rectangle(&mut rng, area, height, width)
            };
            let pos = (
                rng.uniform_range(0.0, (height as i64 - shape.height) as f64 + 1.0)
                    .floor(),
                rng.uniform_range(0.0, (width as i64 - shape.width) as f64 + 1.0)
                    .floor(),
            );
            Walker { shape, pos }
        })
        .collect();

    let plane = height * width;
    let mut data = vec![0.0f32; frames * plane];
    for t in 0..frames {
        if t > 0 && spec.kind == MaskKind::Moving {
            for wk in &mut walkers {
                let dir = rng.uniform_range(0.0, std::f64::consts::TAU);
                let max_y = (height as i64 - wk.shape.height) as f64;
                let max_x = (width as i64 - wk.shape.width) as f64;
                wk.pos.0 = (wk.pos.0 + spec.drift * dir.sin()).clamp(0.0, max_y);
                wk.pos.1 = (wk.pos.1 + spec.drift * dir.cos()).clamp(0.0, max_x);
            }
        }
        let frame = &mut data[t * plane..(t + 1) * plane];
        if t > 0 && spec.kind == MaskKind::Stationary {
            let (head, tail) = data.split_at_mut(t * plane);
            tail[..plane].copy_from_slice(&head[..plane]);
            continue;
        }
        for wk in &walkers {
            let (oy, ox) = (wk.pos.0.round() as i64, wk.pos.1.round() as i64);
            for &(cy, cx) in &wk.shape.cells {
                let (y, x) = (oy + cy, ox + cx);
                if (0..height as i64).contains(&y) && (0..width as i64).contains(&x) {
                    frame[y as usize * width + x as usize] = 1.0;
                }
            }
        }
    }
    MaskTensor::from_tensor(crate::numerics::Tensor::from_vec(&[frames, height, width, 1], data)?)
}
