//! Moving-shapes videos: a smooth two-color gradient background with solid
//! rectangles and disks on constant-velocity, border-bouncing trajectories.

use crate::error::{Error, Result};
use crate::media::video::check_frame_count;
use crate::media::VideoTensor;
use crate::numerics::RngStream;

pub const MIN_SYNTH_SIDE: usize = 16;

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { half_w: f64, half_h: f64 },
    Disk { radius: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Sprite {
    shape: Shape,
    color: [f32; 3],
    center: (f64, f64),
    velocity: (f64, f64),
}

impl Sprite {
    fn extent(&self) -> (f64, f64) {
        match self.shape {
            Shape::Rect { half_w, half_h } => (half_w, half_h),
            Shape::Disk { radius } => (radius, radius),
        }
    }

    fn covers(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        match self.shape {
            Shape::Rect { half_w, half_h } => dx.abs() <= half_w && dy.abs() <= half_h,
            Shape::Disk { radius } => dx * dx + dy * dy <= radius * radius,
        }
    }

    /// Position at frame `t`, reflecting off the borders of a `w x h` frame.
    fn at(&self, t: usize, w: f64, h: f64) -> Sprite {
        let (ex, ey) = self.extent();
        let bounce = |start: f64, vel: f64, lo: f64, hi: f64| -> f64 {
            let span = hi - lo;
            if span <= 0.0 {
                return (lo + hi) / 2.0;
            }
            let p = (start - lo + vel * t as f64).rem_euclid(2.0 * span);
            lo + if p > span { 2.0 * span - p } else { p }
        };
        Sprite {
            center: (
                bounce(self.center.0, self.velocity.0, ex, w - ex),
                bounce(self.center.1, self.velocity.1, ey, h - ey),
            ),
            ..*self
        }
    }
}

fn random_color(rng: &mut RngStream) -> [f32; 3] {
    [
        rng.uniform_range(0.05, 0.95) as f32,
        rng.uniform_range(0.05, 0.95) as f32,
        rng.uniform_range(0.05, 0.95) as f32,
    ]
}

pub fn gen_synthetic_video(
    rng: &mut RngStream,
    height: usize,
    width: usize,
    frames: usize,
    objects: usize,
) -> Result<VideoTensor> {
    if height < MIN_SYNTH_SIDE || width < MIN_SYNTH_SIDE {
        return Err(Error::InvalidArgument(format!(
            "synthetic video needs at least {MIN_SYNTH_SIDE}x{MIN_SYNTH_SIDE}, got {height}x{width}"
        )));
    }
    check_frame_count(frames)?;

    let (w, h) = (width as f64, height as f64);
    let c0 = random_color(rng);
    let c1 = random_color(rng);
    let angle = rng.uniform_range(0.0, std::f64::consts::TAU);
    let (dir_x, dir_y) = (angle.cos(), angle.sin());
    // Projection of the frame corners onto the gradient direction, used to
    // normalize the blend weight to [0, 1].
    let proj = |x: f64, y: f64| x * dir_x + y * dir_y;
    let corners = [proj(0.0, 0.0), proj(w, 0.0), proj(0.0, h), proj(w, h)];
    let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let side = w.min(h);
    let sprites: Vec<Sprite> = (0..objects)
        .map(|_| {
            let shape = if rng.uniform() < 0.5 {
                Shape::Rect {
                    half_w: side * rng.uniform_range(0.08, 0.2),
                    half_h: side * rng.uniform_range(0.08, 0.2),
                }
            } else {
                Shape::Disk {
                    radius: side * rng.uniform_range(0.08, 0.2),
                }
            };
            let speed = |rng: &mut RngStream| {
                let s = rng.uniform_range(1.0, 2.5);
                if rng.uniform() < 0.5 {
                    -s
                } else {
                    s
                }
            };
            Sprite {
                shape,
                color: random_color(rng),
                center: (rng.uniform_range(0.0, w), rng.uniform_range(0.0, h)),
                velocity: (speed(rng), speed(rng)),
            }
        })
        .collect();

    let mut placed: Vec<Sprite> = Vec::with_capacity(objects);
    let mut current_frame = usize::MAX;
    VideoTensor::from_fn(frames, height, width, |t, y, x| {
        if t != current_frame {
            current_frame = t;
            placed = sprites.iter().map(|s| s.at(t, w, h)).collect();
        }
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        // Later sprites are drawn on top.
        if let Some(s) = placed.iter().rev().find(|s| s.covers(px, py)) {
            return s.color;
        }
        let a = ((proj(px, py) - lo) / (hi - lo)) as f32;
        [
            c0[0] + (c1[0] - c0[0]) * a,
            c0[1] + (c1[1] - c0[1]) * a,
            c0[2] + (c1[2] - c0[2]) * a,
        ]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = gen_synthetic_video(&mut RngStream::new(5, 0), 64, 64, 17, 2).unwrap();
        let b = gen_synthetic_video(&mut RngStream::new(5, 0), 64, 64, 17, 2).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic_video(&mut RngStream::new(6, 0), 64, 64, 17, 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn no_objects_means_static_video() {
        let v = gen_synthetic_video(&mut RngStream::new(1, 0), 32, 48, 9, 0).unwrap();
        for t in 1..9 {
            assert_eq!(v.frame(t), v.frame(0));
        }
    }

    #[test]
    fn objects_move_every_frame() {
        for seed in 0..8 {
            let v = gen_synthetic_video(&mut RngStream::new(seed, 0), 64, 64, 17, 1).unwrap();
            for t in 1..17 {
                let mad: f32 = v
                    .frame(t)
                    .iter()
                    .zip(v.frame(t - 1))
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f32>()
                    / v.frame(t).len() as f32;
                assert!(mad > 0.0, "seed {seed}: frames {} and {t} identical", t - 1);
            }
        }
    }

    #[test]
    fn rejects_small_or_bad_dims() {
        let mut rng = RngStream::new(0, 0);
        assert!(gen_synthetic_video(&mut rng, 8, 64, 17, 1).is_err());
        assert!(gen_synthetic_video(&mut rng, 64, 64, 16, 1).is_err());
    }
}
