//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use ditpaint_core::codec::{downsample_mask, Latent, LatentCodec, WaveletCodec};
use ditpaint_core::dit::{
    fuse_tokens, param_count, patchify, Dit, DitInput, DitParams, ModelConfig, RopeTable, Stream,
};
use ditpaint_core::flow::{euler_sample, sample_timestep, SchedulerConfig};
use ditpaint_core::media::{gen_masks, gen_synthetic_video, MaskSpec, MaskTensor, VideoTensor};
use ditpaint_core::multidiffusion::{fuse_step, long_denoise, plan_clips};
use ditpaint_core::numerics::{sample_gaussian, RngStream, Tensor};
use ditpaint_core::pipeline::{
    inpaint, masked_psnr, psnr, smoothed_loss, ssim, train, InpaintOptions, SyntheticSource, TrainConfig,
};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn gaussian<T: ditpaint_core::numerics::Scalar>(rng: &mut RngStream, shape: [usize; 4]) -> Result<Latent<T>, String> {
    Latent::from_tensor(sample_gaussian(rng, &shape).map_err(err)?).map_err(err)
}

fn identity_at_init() -> Check {
    let configs = [
        ModelConfig::tiny(),
        ModelConfig {
            num_blocks: 2,
            num_heads: 2,
            head_dim: 8,
            ..ModelConfig::tiny()
        },
        ModelConfig {
            num_blocks: 3,
            num_heads: 3,
            head_dim: 12,
            ..ModelConfig::tiny()
        },
    ];
    let mut rng = RngStream::new(101, 0);
    let mut blocks = 0;
    for (i, cfg) in configs.into_iter().enumerate() {
        let dit = Dit::<f32>::init(cfg, &mut rng.child(i as u64)).map_err(err)?;
        let x = gaussian(&mut rng, [5, 8, 8, 8])?;
        let y = gaussian(&mut rng, [5, 8, 8, 8])?;
        let m = gaussian(&mut rng, [5, 8, 8, 4])?;
        let tokens = fuse_tokens(
            &dit.patchify_embed(&x, Stream::Noise).map_err(err)?,
            &dit.patchify_embed(&y, Stream::Latent).map_err(err)?,
            &dit.patchify_embed(&m, Stream::Mask).map_err(err)?,
        )
        .map_err(err)?;
        for t in [0.0, 0.3, 1.0] {
            let out = dit.forward_blocks(&tokens, &dit.modulation(t)).map_err(err)?;
            let dev = out.tokens.max_abs_diff(&tokens.tokens).map_err(err)?;
            if dev != 0.0 {
                return Err(format!("config {i}, t={t}: block stack deviates by {dev:e}"));
            }
        }
        blocks += dit.config().num_blocks;
    }
    Ok(format!("{blocks} blocks over 3 configs, max deviation 0"))
}

fn gradient_oracle() -> Check {
    let cfg = ModelConfig {
        num_blocks: 2,
        num_heads: 2,
        head_dim: 8,
        ..ModelConfig::tiny()
    };
    let mut rng = RngStream::new(202, 0);
    let params = DitParams::<f64>::random(&cfg, &mut rng, 0.15).map_err(err)?;
    let x0: Latent<f64> = gaussian(&mut rng, [5, 8, 8, 8])?;
    let x1: Latent<f64> = gaussian(&mut rng, [5, 8, 8, 8])?;
    let y: Latent<f64> = gaussian(&mut rng, [5, 8, 8, 8])?;
    let m: Latent<f64> = gaussian(&mut rng, [5, 8, 8, 4])?;
    let t = 0.61;
    let x_t = Latent::from_tensor(x1.tensor().scale(t).add(&x0.tensor().scale(1.0 - t)).map_err(err)?).map_err(err)?;
    let target = Latent::from_tensor(x1.tensor().sub(x0.tensor()).map_err(err)?).map_err(err)?;
    let input = DitInput {
        x_t: &x_t,
        y: &y,
        mask: &m,
        t,
    };

    let dit = Dit::new(cfg.clone(), params.clone()).map_err(err)?;
    let (_, grads) = dit.loss_and_grad(&input, &target).map_err(err)?;
    let analytic = grads.flatten();

    let loss = |p: &DitParams<f64>| -> Result<f64, String> {
        let pred = Dit::new(cfg.clone(), p.clone())
            .map_err(err)?
            .forward(&input)
            .map_err(err)?;
        let d = pred.tensor().sub(target.tensor()).map_err(err)?;
        Ok(d.data().iter().map(|v| v * v).sum::<f64>() / d.len() as f64)
    };
    let eps = 1e-5;
    let base = params.flatten();
    let mut probe = params.clone();
    let mut flat = base.clone();
    let (mut significant, mut good) = (0usize, 0usize);
    for i in 0..base.len() {
        flat[i] = base[i] + eps;
        probe.assign_flat(&flat).map_err(err)?;
        let up = loss(&probe)?;
        flat[i] = base[i] - eps;
        probe.assign_flat(&flat).map_err(err)?;
        let down = loss(&probe)?;
        flat[i] = base[i];
        let numeric = (up - down) / (2.0 * eps);
        let scale = analytic[i].abs().max(numeric.abs());
        if scale > 1e-6 {
            significant += 1;
            if (analytic[i] - numeric).abs() / scale < 1e-4 {
                good += 1;
            }
        }
    }
    let frac = good as f64 / significant.max(1) as f64;
    ensure(
        significant > 0 && frac >= 0.95,
        format!(
            "{good}/{significant} significant coordinates within 1e-4 ({:.2}%)",
            100.0 * frac
        ),
    )
}

fn euler_exactness() -> Check {
    let shape = [5, 4, 4, 8];
    let mut rng = RngStream::new(303, 0);
    let x1: Latent<f32> = gaussian(&mut rng, shape)?;
    let y = Latent::zeros(5, 4, 4, 8).map_err(err)?;
    let m = Latent::zeros(5, 4, 4, 4).map_err(err)?;
    let mut outs = Vec::new();
    let mut worst = 0.0f64;
    for k in [1, 4, 8] {
        // Reproduce the sampler's initial noise to build the oracle field.
        let x0: Latent<f32> = gaussian(&mut RngStream::new(7, 0), shape)?;
        let v = Latent::from_tensor(x1.tensor().sub(x0.tensor()).map_err(err)?).map_err(err)?;
        let out = euler_sample(
            |_, _, _, _| Ok(v.clone()),
            &y,
            &m,
            &shape,
            &SchedulerConfig::with_steps(k),
            &mut RngStream::new(7, 0),
        )
        .map_err(err)?;
        worst = worst.max(out.tensor().max_abs_diff(x1.tensor()).map_err(err)?);
        outs.push(out);
    }
    let bitwise = outs[1].data() == outs[2].data();
    ensure(
        worst < 1e-5 && bitwise,
        format!("max error {worst:e}, K=4 and K=8 bitwise equal: {bitwise}"),
    )
}

fn multidiffusion() -> Check {
    let mut rng = RngStream::new(404, 0);
    let mut plans = 0;
    for total in 1..=12usize {
        for window in 1..=6usize {
            for stride in 1..=window {
                let plan = plan_clips(total, window, stride).map_err(err)?;
                let len = plan.clip_len();
                let clips = (0..plan.len())
                    .map(|_| gaussian::<f64>(&mut rng, [len, 2, 1, 3]))
                    .collect::<Result<Vec<_>, _>>()?;
                let fused = fuse_step(&clips, &plan).map_err(err)?;
                let frame = 6;
                for i in 0..total {
                    let members: Vec<usize> = (0..plan.len())
                        .filter(|&k| plan.starts[k] <= i && i < plan.starts[k] + len)
                        .collect();
                    if members.is_empty() {
                        return Err(format!("plan ({total},{window},{stride}) leaves frame {i} uncovered"));
                    }
                    for e in 0..frame {
                        let sum: f64 = members
                            .iter()
                            .map(|&k| clips[k].data()[(i - plan.starts[k]) * frame + e])
                            .sum();
                        if fused.data()[i * frame + e] != sum / members.len() as f64 {
                            return Err(format!("plan ({total},{window},{stride}) differs at frame {i}"));
                        }
                    }
                }
                plans += 1;
            }
        }
    }

    let paper = plan_clips(33, 17, 8).map_err(err)?;
    if paper.starts != [0, 8, 16] {
        return Err(format!("plan (33,17,8) starts {:?}", paper.starts));
    }

    let shape = [4, 4, 4, 8];
    let mut rng = RngStream::new(405, 0);
    let y: Latent<f32> = gaussian(&mut rng, shape)?;
    let m: Latent<f32> = gaussian(&mut rng, [4, 4, 4, 4])?;
    let field = |x: &Latent<f32>, y: &Latent<f32>, _: &Latent<f32>, t: f64| -> ditpaint_core::Result<Latent<f32>> {
        let v = y.tensor().sub(x.tensor())?.scale(1.0 + t as f32);
        Latent::from_tensor(v)
    };
    let cfg = SchedulerConfig::with_steps(6);
    let mut identical = true;
    for window in [4, 6] {
        let plan = plan_clips(4, window, 2).map_err(err)?;
        let a = long_denoise(
            |_, x, y, m, t| field(x, y, m, t),
            &y,
            &m,
            &cfg,
            &plan,
            &mut RngStream::new(9, 0),
        )
        .map_err(err)?;
        let b = euler_sample(field, &y, &m, &shape, &cfg, &mut RngStream::new(9, 0)).map_err(err)?;
        identical &= a.data() == b.data();
    }
    ensure(
        identical,
        format!("{plans} plans match brute force, (33,17,8) starts [0, 8, 16], single clip bitwise equal: {identical}"),
    )
}

fn shape_contract() -> Check {
    let video = VideoTensor::constant(65, 64, 64, [0.25, 0.5, 0.75]).map_err(err)?;
    let mask = MaskTensor::zeros(65, 64, 64).map_err(err)?;
    let z = WaveletCodec.encode(&video).map_err(err)?;
    let zm = downsample_mask(&mask).map_err(err)?;
    let (tokens, _) = patchify(&z).map_err(err)?;
    let (w, h, n) = (64 / 8, 64 / 8, (65 - 1) / 4 + 1);
    ensure(
        z.dims() == (h, w, n, 8)
            && zm.dims() == (h, w, n, 4)
            && tokens.shape()[0] == w * h * n / 4
            && w * h * n / 4 == 272,
        format!(
            "latent {:?}, mask {:?}, {} tokens",
            z.dims(),
            zm.dims(),
            tokens.shape()[0]
        ),
    )
}

fn parameter_count() -> Check {
    let n = param_count(&ModelConfig::paper());
    ensure(
        (320_000_000..=480_000_000).contains(&n),
        format!("{n} parameters ({:.3}B)", n as f64 / 1e9),
    )
}

fn rope_shift() -> Check {
    let hd = 24;
    let coords: Vec<(f64, f64, f64)> = (0..27)
        .map(|i| ((i / 9) as f64, ((i / 3) % 3) as f64, (i % 3) as f64))
        .collect();
    let mut rng = RngStream::new(707, 0);
    let q: Vec<f64> = (0..27 * hd).map(|_| rng.normal()).collect();
    let k: Vec<f64> = (0..27 * hd).map(|_| rng.normal()).collect();
    let logits = |coords: &[(f64, f64, f64)]| -> Result<Vec<f64>, String> {
        let rope = RopeTable::<f64>::from_coords(coords, hd, 10_000.0).map_err(err)?;
        let (mut q, mut k) = (q.clone(), k.clone());
        rope.apply(&mut q);
        rope.apply(&mut k);
        let mut out = Vec::with_capacity(27 * 27);
        for i in 0..27 {
            for j in 0..27 {
                out.push((0..hd).map(|e| q[i * hd + e] * k[j * hd + e]).sum::<f64>() / (hd as f64).sqrt());
            }
        }
        Ok(out)
    };
    let base = logits(&coords)?;
    let mut worst = 0.0f64;
    for axis in 0..3 {
        for delta in [1.0, 5.0] {
            let shifted: Vec<_> = coords
                .iter()
                .map(|&(t, r, c)| {
                    let mut p = [t, r, c];
                    p[axis] += delta;
                    (p[0], p[1], p[2])
                })
                .collect();
            let moved = logits(&shifted)?;
            worst = base
                .iter()
                .zip(&moved)
                .map(|(a, b)| (a - b).abs())
                .fold(worst, f64::max);
        }
    }
    ensure(worst <= 1e-5, format!("max logit change {worst:e}"))
}

fn learning_signal() -> Check {
    let cfg = TrainConfig {
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &SyntheticSource { objects: 3 }, None, |_| Ok(())).map_err(err)?;
    let total = cfg.total_iterations();
    let early = smoothed_loss(&out.losses, 50, 50).ok_or("too few iterations")?;
    let late = smoothed_loss(&out.losses, total, 50).ok_or("too few iterations")?;
    let ratio = late / early;

    let trained = Dit::new(cfg.model.clone(), out.checkpoint.params).map_err(err)?;
    let untrained =
        Dit::<f32>::init(cfg.model.clone(), &mut RngStream::new(cfg.seed, 0).child(u64::MAX)).map_err(err)?;
    let (mut ours, mut base) = (0.0, 0.0);
    for i in 0..8u64 {
        let mut rng = RngStream::new(80_000 + i, 0);
        let video = gen_synthetic_video(&mut rng, 64, 64, 17, 3).map_err(err)?;
        let spec = if i % 2 == 0 {
            MaskSpec::stationary()
        } else {
            MaskSpec::moving()
        };
        let mask = gen_masks(&mut rng, 64, 64, 17, &spec).map_err(err)?;
        let opts = InpaintOptions::new(4, i);
        let score = |dit: &Dit<f32>| -> Result<f64, String> {
            let out = inpaint(dit, &video, &mask, &opts).map_err(err)?;
            masked_psnr(&out, &video, &mask)
                .map_err(err)?
                .ok_or_else(|| "empty mask".to_string())
        };
        ours += score(&trained)? / 8.0;
        base += score(&untrained)? / 8.0;
    }
    let gain = ours - base;
    ensure(
        ratio <= 0.5 && gain >= 3.0,
        format!(
            "loss {early:.4} -> {late:.4} (ratio {ratio:.3}), masked PSNR {ours:.2} vs untrained {base:.2} dB (+{gain:.2})"
        ),
    )
}

fn metric_closed_forms() -> Check {
    let gt = VideoTensor::constant(5, 16, 16, [0.0; 3]).map_err(err)?;
    let pred = VideoTensor::constant(5, 16, 16, [0.5; 3]).map_err(err)?;
    let p = psnr(&pred, &gt).map_err(err)?;
    let mut rng = RngStream::new(909, 0);
    let data = (0..5 * 32 * 32 * 3).map(|_| rng.uniform() as f32).collect();
    let x = VideoTensor::from_tensor(Tensor::from_vec(&[5, 32, 32, 3], data).map_err(err)?).map_err(err)?;
    let s = ssim(&x, &x).map_err(err)?;
    ensure(
        (p - 6.0206).abs() <= 1e-3 && (s - 1.0).abs() <= 1e-9,
        format!("psnr {p:.5} dB, ssim(x, x) = {s}"),
    )
}

fn logit_normal() -> Check {
    let cfg = SchedulerConfig::default();
    let mut rng = RngStream::new(1010, 0);
    let mut t: Vec<f64> = (0..100_000).map(|_| sample_timestep(&mut rng, &cfg)).collect();
    t.sort_by(f64::total_cmp);
    let median = (t[49_999] + t[50_000]) / 2.0;
    let interior = t.iter().filter(|&&v| v > 0.25 && v < 0.75).count();
    let ends = t.len() - interior;
    ensure(
        (median - 0.5).abs() <= 0.02 && interior > ends,
        format!("median {median:.4}, interior {interior} vs endpoint {ends}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check, Duration); 10] = [
        ("identity at init", identity_at_init, Duration::from_secs(1)),
        ("gradient oracle", gradient_oracle, Duration::from_secs(300)),
        ("flow-matching exactness", euler_exactness, Duration::from_secs(1)),
        ("multidiffusion correctness", multidiffusion, Duration::from_secs(10)),
        ("shape contract", shape_contract, Duration::MAX),
        ("parameter count", parameter_count, Duration::from_secs(1)),
        ("rope shift invariance", rope_shift, Duration::from_secs(10)),
        (
            "desk-scale learning signal",
            learning_signal,
            Duration::from_secs(45 * 60),
        ),
        ("metric closed forms", metric_closed_forms, Duration::MAX),
        ("logit-normal weighting", logit_normal, Duration::MAX),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let (ok, detail) = match result {
            Ok(d) if elapsed <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {budget:?} budget")),
            Err(d) => (false, d),
        };
        failed += usize::from(!ok);
        println!(
            "criterion {:>2} {name}: {} ({detail}; {:.2}s)",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
