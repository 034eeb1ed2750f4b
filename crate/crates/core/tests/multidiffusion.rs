use ditpaint_core::codec::Latent;
use ditpaint_core::flow::{euler_sample, SchedulerConfig};
use ditpaint_core::multidiffusion::{fuse_step, long_denoise, plan_clips};
use ditpaint_core::numerics::{sample_gaussian, RngStream, Tensor};
use proptest::prelude::*;

fn random_clips(seed: u64, count: usize, len: usize) -> Vec<Latent<f64>> {
    let mut rng = RngStream::new(seed, 0);
    (0..count)
        .map(|_| Latent::from_tensor(sample_gaussian(&mut rng, &[len, 2, 2, 3]).unwrap()).unwrap())
        .collect()
}

/// Mean over the clips that cover frame `i`, computed from first principles.
fn brute_force(clips: &[Latent<f64>], starts: &[usize], total: usize) -> Vec<f64> {
    let len = clips[0].frames();
    let frame = clips[0].frame_len();
    let mut out = Vec::new();
    for i in 0..total {
        let members: Vec<usize> = (0..starts.len())
            .filter(|&k| starts[k] <= i && i < starts[k] + len)
            .collect();
        assert!(!members.is_empty(), "frame {i} uncovered");
        for e in 0..frame {
            let sum: f64 = members
                .iter()
                .map(|&k| clips[k].data()[(i - starts[k]) * frame + e])
                .sum();
            out.push(sum / members.len() as f64);
        }
    }
    out
}

#[test]
fn exhaustive_small_plans_match_brute_force() {
    let mut checked = 0;
    for total in 1..=12 {
        for window in 1..=6 {
            for stride in 1..=window {
                let plan = plan_clips(total, window, stride).unwrap();
                let r = if total > window {
                    (total - window).div_ceil(stride) + 1
                } else {
                    1
                };
                assert_eq!(plan.len(), r);
                assert_eq!(plan.starts.last().unwrap() + plan.clip_len(), total);
                assert!(plan.starts.windows(2).all(|w| w[0] < w[1]));
                let clips = random_clips((total * 100 + window * 10 + stride) as u64, plan.len(), plan.clip_len());
                let fused = fuse_step(&clips, &plan).unwrap();
                assert_eq!(fused.data(), brute_force(&clips, &plan.starts, total).as_slice());
                checked += 1;
            }
        }
    }
    assert!(checked > 200);
}

#[test]
fn paper_plan_brute_force() {
    let plan = plan_clips(33, 17, 8).unwrap();
    assert_eq!(plan.starts, vec![0, 8, 16]);
    let clips = random_clips(1, 3, 17);
    let fused = fuse_step(&clips, &plan).unwrap();
    assert_eq!(fused.data(), brute_force(&clips, &plan.starts, 33).as_slice());
    assert_eq!(plan.covering(8), vec![0, 1]);
    assert_eq!(plan.covering(16), vec![0, 1, 2]);
}

#[test]
fn constant_clips_fuse_to_constant() {
    let plan = plan_clips(20, 17, 2).unwrap();
    let clip = Latent::from_tensor(Tensor::full(&[17, 1, 2, 2], 0.3f64).unwrap()).unwrap();
    let fused = fuse_step(&vec![clip; plan.len()], &plan).unwrap();
    assert!(fused.data().iter().all(|&v| v == 0.3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fusion_is_idempotent_on_consistent_clips(total in 1usize..40, window in 1usize..12, stride_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let stride = 1 + ((window - 1) as f64 * stride_frac) as usize;
        let plan = plan_clips(total, window, stride).unwrap();
        let full: Tensor<f64> = sample_gaussian(&mut RngStream::new(seed, 0), &[total, 1, 2, 2]).unwrap();
        let full = Latent::from_tensor(full).unwrap();
        let clips: Vec<_> = plan.starts.iter().map(|&s| full.frames_range(s, s + plan.clip_len()).unwrap()).collect();
        let fused = fuse_step(&clips, &plan).unwrap();
        // Frames in one clip are untouched; the rest agree to rounding.
        for i in 0..total {
            let f = full.frame_len();
            for e in i * f..(i + 1) * f {
                if plan.covering(i).len() == 1 {
                    prop_assert_eq!(fused.data()[e], full.data()[e]);
                } else {
                    prop_assert!((fused.data()[e] - full.data()[e]).abs() < 1e-12);
                }
            }
        }
    }
}

fn cond(frames: usize) -> (Latent<f32>, Latent<f32>) {
    let mut rng = RngStream::new(77, 0);
    (
        Latent::from_tensor(sample_gaussian(&mut rng, &[frames, 4, 4, 8]).unwrap()).unwrap(),
        Latent::from_tensor(Tensor::full(&[frames, 4, 4, 4], 0.5).unwrap()).unwrap(),
    )
}

#[test]
fn single_clip_matches_euler_sample_bitwise() {
    let (y, m) = cond(5);
    // A velocity that depends on state, condition and time.
    let v = |x: &Latent<f32>, y: &Latent<f32>, t: f64| {
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&a, &b)| (b - a) * (1.0 + t as f32) + a.sin())
            .collect();
        Latent::from_tensor(Tensor::from_vec(x.tensor().shape(), data)?)
    };
    let cfg = SchedulerConfig::with_steps(4);
    for window in [5, 9] {
        let plan = plan_clips(5, window, 2).unwrap();
        let long = long_denoise(
            |_, x, y, _, t| v(x, y, t),
            &y,
            &m,
            &cfg,
            &plan,
            &mut RngStream::new(3, 1),
        )
        .unwrap();
        let single = euler_sample(
            |x, y, _, t| v(x, y, t),
            &y,
            &m,
            &[5, 4, 4, 8],
            &cfg,
            &mut RngStream::new(3, 1),
        )
        .unwrap();
        assert_eq!(long, single);
    }
}

#[test]
fn consistent_oracle_reaches_target_across_clips() {
    let (y, m) = cond(13);
    let target = y.clone();
    let plan = plan_clips(13, 5, 2).unwrap();
    let cfg = SchedulerConfig::with_steps(4);
    // Velocity pointing from the current state to the target over the
    // remaining time is consistent across overlapping clips.
    let out = long_denoise(
        |k, x, _, _, t| {
            let s = plan.starts[k];
            let tgt = target.frames_range(s, s + 5)?;
            let data = x
                .data()
                .iter()
                .zip(tgt.data())
                .map(|(&a, &b)| (b - a) / (1.0 - t as f32))
                .collect();
            Latent::from_tensor(Tensor::from_vec(x.tensor().shape(), data)?)
        },
        &y,
        &m,
        &cfg,
        &plan,
        &mut RngStream::new(8, 0),
    )
    .unwrap();
    assert!(out.tensor().max_abs_diff(target.tensor()).unwrap() < 1e-5);
}
