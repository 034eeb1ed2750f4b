//! Fast built-in invariant checks.

use crate::codec::{downsample_mask, Latent, LatentCodec, WaveletCodec};
use crate::dit::{fuse_tokens, param_count, patchify, Dit, ModelConfig, RopeTable, Stream};
use crate::error::Result;
use crate::flow::{euler_sample, velocity_target, SchedulerConfig};
use crate::media::{MaskTensor, VideoTensor};
use crate::multidiffusion::{fuse_step, plan_clips};
use crate::numerics::{sample_gaussian, RngStream};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    match f() {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn gaussian(rng: &mut RngStream, shape: [usize; 4]) -> Result<Latent<f32>> {
    Latent::from_tensor(sample_gaussian(rng, &shape)?)
}

fn identity_at_init() -> Result<(bool, String)> {
    let dit = Dit::<f32>::init(ModelConfig::tiny(), &mut RngStream::new(1, 0))?;
    let mut rng = RngStream::new(2, 0);
    let x = dit.patchify_embed(&gaussian(&mut rng, [5, 8, 8, 8])?, Stream::Noise)?;
    let y = dit.patchify_embed(&gaussian(&mut rng, [5, 8, 8, 8])?, Stream::Latent)?;
    let m = dit.patchify_embed(&gaussian(&mut rng, [5, 8, 8, 4])?, Stream::Mask)?;
    let tokens = fuse_tokens(&x, &y, &m)?;
    let out = dit.forward_blocks(&tokens, &dit.modulation(0.5))?;
    let dev = out.tokens.max_abs_diff(&tokens.tokens)?;
    Ok((dev == 0.0, format!("max deviation {dev:e}")))
}

fn fusion_sweep() -> Result<(bool, String)> {
    let mut plans = 0;
    let mut rng = RngStream::new(3, 0);
    for total in 1..=12 {
        for window in 1..=6 {
            for stride in 1..=window {
                let plan = plan_clips(total, window, stride)?;
                let len = plan.clip_len();
                let clips = (0..plan.len())
                    .map(|_| Latent::<f64>::from_tensor(sample_gaussian(&mut rng, &[len, 1, 1, 2])?))
                    .collect::<Result<Vec<_>>>()?;
                let fused = fuse_step(&clips, &plan)?;
                for i in 0..total {
                    let cover = plan.covering(i);
                    for c in 0..2 {
                        let sum: f64 = cover
                            .iter()
                            .map(|&k| clips[k].data()[(i - plan.starts[k]) * 2 + c])
                            .sum();
                        if fused.data()[i * 2 + c] != sum / cover.len() as f64 {
                            return Ok((false, format!("plan ({total},{window},{stride}) frame {i}")));
                        }
                    }
                }
                plans += 1;
            }
        }
    }
    Ok((true, format!("{plans} plans")))
}

fn euler_exactness() -> Result<(bool, String)> {
    let shape = [5, 2, 2, 8];
    let x1 = gaussian(&mut RngStream::new(4, 0), shape)?;
    let x0 = gaussian(&mut RngStream::new(5, 0), shape)?;
    let v = velocity_target(&x0, &x1)?;
    let y = Latent::zeros(5, 2, 2, 8)?;
    let m = Latent::zeros(5, 2, 2, 4)?;
    let mut outs = Vec::new();
    let mut worst = 0.0f64;
    for k in [1, 4, 8] {
        let out = euler_sample(
            |_, _, _, _| Ok(v.clone()),
            &y,
            &m,
            &shape,
            &SchedulerConfig::with_steps(k),
            &mut RngStream::new(5, 0),
        )?;
        worst = worst.max(out.tensor().max_abs_diff(x1.tensor())?);
        outs.push(out);
    }
    let bitwise = outs[1] == outs[2];
    Ok((
        worst < 1e-5 && bitwise,
        format!("max error {worst:e}, K=4 vs K=8 bitwise {bitwise}"),
    ))
}

fn rope_shift() -> Result<(bool, String)> {
    let hd = 24;
    let grid: Vec<(f64, f64, f64)> = (0..27)
        .map(|i| ((i / 9) as f64, ((i / 3) % 3) as f64, (i % 3) as f64))
        .collect();
    let mut rng = RngStream::new(6, 0);
    let q: Vec<f64> = (0..27 * hd).map(|_| rng.normal()).collect();
    let k: Vec<f64> = (0..27 * hd).map(|_| rng.normal()).collect();
    let logits = |coords: &[(f64, f64, f64)]| -> Result<Vec<f64>> {
        let rope = RopeTable::from_coords(coords, hd, 10_000.0)?;
        let (mut q, mut k) = (q.clone(), k.clone());
        rope.apply(&mut q);
        rope.apply(&mut k);
        let mut out = Vec::new();
        for i in 0..27 {
            for j in 0..27 {
                out.push((0..hd).map(|e| q[i * hd + e] * k[j * hd + e]).sum::<f64>() / (hd as f64).sqrt());
            }
        }
        Ok(out)
    };
    let base = logits(&grid)?;
    let mut worst = 0.0f64;
    for axis in 0..3 {
        let shifted: Vec<_> = grid
            .iter()
            .map(|&(t, r, c)| {
                let mut p = [t, r, c];
                p[axis] += 3.0;
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
    Ok((worst <= 1e-5, format!("max logit change {worst:e}")))
}

fn shape_contract() -> Result<(bool, String)> {
    let video = VideoTensor::constant(65, 64, 64, [0.5; 3])?;
    let z = WaveletCodec.encode(&video)?;
    let m = downsample_mask(&MaskTensor::zeros(65, 64, 64)?)?;
    let (tokens, _) = patchify(&z)?;
    let ok = z.dims() == (8, 8, 17, 8) && m.dims() == (8, 8, 17, 4) && tokens.shape()[0] == 272;
    Ok((
        ok,
        format!(
            "latent {:?}, mask {:?}, tokens {}",
            z.dims(),
            m.dims(),
            tokens.shape()[0]
        ),
    ))
}

fn paper_params() -> Result<(bool, String)> {
    let n = param_count(&ModelConfig::paper());
    Ok(((320_000_000..=480_000_000).contains(&n), format!("{n} parameters")))
}

pub fn run_selftest() -> Vec<CheckResult> {
    vec![
        check("identity at init", identity_at_init),
        check("multidiffusion fusion sweep", fusion_sweep),
        check("euler exactness", euler_exactness),
        check("rope shift invariance", rope_shift),
        check("shape contract", shape_contract),
        check("paper parameter count", paper_params),
    ]
}
