//! Forward pass and hand-derived backward pass of the transformer.

use rayon::prelude::*;

use crate::codec::Latent;
use crate::dit::config::{ModelConfig, PATCH_CELLS};
use crate::dit::params::{
    BlockParams, DitParams, Linear, GATE_ATTN, GATE_FFN, SCALE_ATTN, SCALE_FFN, SHIFT_ATTN, SHIFT_FFN,
};
use crate::dit::patch::{patchify, unpatchify, TokenGrid, TokenSequence};
use crate::dit::rope::RopeTable;
use crate::dit::timestep::timestep_frequencies;
use crate::error::{Error, Result};
use crate::numerics::ops::{gelu, gelu_grad, layer_norm_rows, layer_norm_rows_backward, silu, silu_grad, softmax_rows};
use crate::numerics::{RngStream, Scalar, Tensor};

/// One denoiser evaluation: noisy latent, masked-video latent, latent mask
/// and timestep.
#[derive(Debug, Clone, Copy)]
pub struct DitInput<'a, T: Scalar> {
    pub x_t: &'a Latent<T>,
    pub y: &'a Latent<T>,
    pub mask: &'a Latent<T>,
    pub t: f64,
}

/// Timestep conditioning for every block and the final layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Modulation<T: Scalar> {
    /// One `6D` vector per block:
    /// `[shift_attn, scale_attn, gate_attn, shift_ffn, scale_ffn, gate_ffn]`.
    pub blocks: Vec<Vec<T>>,
    /// `[shift, scale]` of the final layer, `2D`.
    pub last: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct Dit<T: Scalar = f32> {
    cfg: ModelConfig,
    params: DitParams<T>,
}

impl<T: Scalar> Dit<T> {
    pub fn new(cfg: ModelConfig, params: DitParams<T>) -> Result<Self> {
        cfg.validate()?;
        let manifest = cfg.manifest();
        let tensors = params.tensors();
        if tensors.len() != manifest.len() {
            return Err(Error::Config(format!(
                "parameter set has {} tensors, config expects {}",
                tensors.len(),
                manifest.len()
            )));
        }
        for ((name, shape), t) in manifest.iter().zip(tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, config expects {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Dit { cfg, params })
    }

    pub fn init(cfg: ModelConfig, rng: &mut RngStream) -> Result<Self> {
        let params = DitParams::init(&cfg, rng)?;
        Ok(Dit { cfg, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &DitParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut DitParams<T> {
        &mut self.params
    }

    pub fn into_params(self) -> DitParams<T> {
        self.params
    }

    fn check_input(&self, input: &DitInput<T>) -> Result<TokenGrid> {
        let c = self.cfg.latent_channels;
        let (h, w, n, xc) = input.x_t.dims();
        if xc != c {
            return Err(Error::invalid_shape(
                input.x_t.tensor().shape(),
                format!("noisy latent must have {c} channels"),
            ));
        }
        input.x_t.same_dims(input.y, "model input")?;
        if input.mask.dims() != (h, w, n, self.cfg.mask_channels) {
            return Err(Error::ShapeMismatch {
                op: "model mask",
                lhs: input.x_t.tensor().shape().to_vec(),
                rhs: input.mask.tensor().shape().to_vec(),
            });
        }
        if !input.t.is_finite() {
            return Err(Error::NonFinite(format!("timestep {}", input.t)));
        }
        TokenGrid::for_latent(n, h, w)
    }

    /// Patch embedding of one stream through its own projection.
    pub fn patchify_embed(&self, x: &Latent<T>, which: Stream) -> Result<TokenSequence<T>> {
        let lin = match which {
            Stream::Noise => &self.params.embed_noise,
            Stream::Latent => &self.params.embed_latent,
            Stream::Mask => &self.params.embed_mask,
        };
        let (p, grid) = patchify(x)?;
        if p.shape()[1] != lin.fan_in() {
            return Err(Error::invalid_shape(
                x.tensor().shape(),
                format!("{which:?} embedder takes {} values per patch", lin.fan_in()),
            ));
        }
        let tokens = linear(p.data(), grid.len(), lin);
        Ok(TokenSequence {
            tokens: Tensor::from_vec(&[grid.len(), lin.fan_out()], tokens)?,
            grid,
        })
    }

    /// Per-block and final-layer modulation vectors for timestep `t`.
    pub fn modulation(&self, t: f64) -> Modulation<T> {
        self.time_forward(t).0
    }

    fn time_forward(&self, t: f64) -> (Modulation<T>, TimeCache<T>) {
        let p = &self.params;
        let freq = timestep_frequencies::<T>(t, self.cfg.time_freq_dim);
        let h1 = linear(&freq, 1, &p.time_fc1);
        let a1: Vec<T> = h1.iter().map(|&v| silu(v)).collect();
        let c = linear(&a1, 1, &p.time_fc2);
        let sc: Vec<T> = c.iter().map(|&v| silu(v)).collect();
        let blocks = match &p.block_modulation {
            Some(shared) => {
                let base = linear(&sc, 1, shared);
                p.blocks
                    .iter()
                    .map(|b| base.iter().zip(b.modulation.data()).map(|(&x, &y)| x + y).collect())
                    .collect()
            }
            None => Vec::new(),
        };
        let last = linear(&sc, 1, &p.final_modulation);
        (Modulation { blocks, last }, TimeCache { freq, h1, a1, c, sc })
    }

    /// Runs the block stack on already-fused tokens.
    pub fn forward_blocks(&self, tokens: &TokenSequence<T>, modulation: &Modulation<T>) -> Result<TokenSequence<T>> {
        let d = self.cfg.embed_dim();
        if tokens.tokens.shape() != [tokens.len(), d] || modulation.blocks.len() != self.params.blocks.len() {
            return Err(Error::invalid_shape(
                tokens.tokens.shape(),
                format!(
                    "expected [{}, {d}] tokens and {} modulations",
                    tokens.len(),
                    self.params.blocks.len()
                ),
            ));
        }
        let rope = RopeTable::for_grid(tokens.grid, self.cfg.head_dim, self.cfg.rope_base)?;
        let mut x = tokens.tokens.data().to_vec();
        for (b, m) in self.params.blocks.iter().zip(&modulation.blocks) {
            x = block_forward_raw(b, &x, tokens.len(), d, self.cfg.num_heads, m, &rope, false).0;
        }
        Ok(TokenSequence {
            tokens: Tensor::from_vec(&[tokens.len(), d], x)?,
            grid: tokens.grid,
        })
    }

    /// Velocity prediction `u(x_t, y, m, t)` with the shape of `x_t`.
    pub fn forward(&self, input: &DitInput<T>) -> Result<Latent<T>> {
        Ok(self.forward_cached(input, false)?.0)
    }

    /// Independent forwards, evaluated in parallel.
    pub fn forward_batch(&self, inputs: &[DitInput<T>]) -> Result<Vec<Latent<T>>> {
        inputs.par_iter().map(|i| self.forward(i)).collect()
    }

    fn forward_cached(&self, input: &DitInput<T>, keep: bool) -> Result<(Latent<T>, Option<ForwardCache<T>>)> {
        let grid = self.check_input(input)?;
        let cfg = &self.cfg;
        let p = &self.params;
        let (d, l) = (cfg.embed_dim(), grid.len());
        let (px, _) = patchify(input.x_t)?;
        let (py, _) = patchify(input.y)?;
        let (pm, _) = patchify(input.mask)?;
        let mut x = linear(px.data(), l, &p.embed_noise);
        add_into(&mut x, &linear(py.data(), l, &p.embed_latent));
        add_into(&mut x, &linear(pm.data(), l, &p.embed_mask));

        let (modulation, time) = self.time_forward(input.t);
        let rope = RopeTable::for_grid(grid, cfg.head_dim, cfg.rope_base)?;
        let mut blocks = Vec::new();
        for (b, m) in p.blocks.iter().zip(&modulation.blocks) {
            let (next, cache) = block_forward_raw(b, &x, l, d, cfg.num_heads, m, &rope, keep);
            if let Some(c) = cache {
                blocks.push(c);
            }
            x = next;
        }

        let mut xhat = vec![T::ZERO; l * d];
        let mut rstd = vec![T::ZERO; l];
        layer_norm_rows(&x, d, &mut xhat, &mut rstd);
        let u = modulate(&xhat, &modulation.last[..d], &modulation.last[d..], d);
        let out = linear(&u, l, &p.head);
        let stride = cfg.head_out_dim() / PATCH_CELLS;
        let pred = unpatchify(
            &Tensor::from_vec(&[l, cfg.head_out_dim()], out)?,
            grid,
            cfg.latent_channels,
            stride,
        )?;
        if !pred.tensor().all_finite() {
            return Err(Error::NonFinite("model prediction".into()));
        }
        let cache = keep.then(|| ForwardCache {
            px: px.into_data(),
            py: py.into_data(),
            pm: pm.into_data(),
            time,
            modulation,
            rope,
            blocks,
            xhat,
            rstd,
            u,
            grid,
        });
        Ok((pred, cache))
    }

    /// Flow-matching loss `mean((u - target)^2)` and its gradient with
    /// respect to every parameter.
    pub fn loss_and_grad(&self, input: &DitInput<T>, target: &Latent<T>) -> Result<(f64, DitParams<T>)> {
        let (pred, cache) = self.forward_cached(input, true)?;
        pred.same_dims(target, "loss target")?;
        let cache = cache.expect("cache requested");
        let count = pred.data().len() as f64;
        let mut loss = 0.0;
        let two_over_n = T::from_f64(2.0 / count);
        let dpred: Vec<T> = pred
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| {
                let diff = a - b;
                loss += diff.to_f64() * diff.to_f64();
                diff * two_over_n
            })
            .collect();
        let loss = loss / count;
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let dpred = Latent::from_tensor(Tensor::from_vec(pred.tensor().shape(), dpred)?)?;
        let grads = self.backward(&cache, &dpred)?;
        Ok((loss, grads))
    }

    /// Mean loss and mean gradient over independent samples. Per-sample work
    /// runs in parallel; gradients are summed in sample order.
    pub fn batch_loss_and_grad(&self, batch: &[(DitInput<T>, &Latent<T>)]) -> Result<(f64, DitParams<T>)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let parts: Vec<(f64, DitParams<T>)> = batch
            .par_iter()
            .map(|(input, target)| self.loss_and_grad(input, target))
            .collect::<Result<_>>()?;
        let mut iter = parts.into_iter();
        let (mut loss, mut grads) = iter.next().expect("non-empty");
        for (l, g) in iter {
            loss += l;
            grads.accumulate(&g);
        }
        let inv = 1.0 / batch.len() as f64;
        grads.scale(T::from_f64(inv));
        Ok((loss * inv, grads))
    }

    fn backward(&self, cache: &ForwardCache<T>, dpred: &Latent<T>) -> Result<DitParams<T>> {
        let cfg = &self.cfg;
        let p = &self.params;
        let mut g = DitParams::<T>::zeros(cfg)?;
        let (d, l) = (cfg.embed_dim(), cache.grid.len());
        let c = cfg.latent_channels;
        let stride = cfg.head_out_dim() / PATCH_CELLS;

        // Output head; discarded channels receive zero gradient.
        let (dp, _) = patchify(dpred)?;
        let mut dout = vec![T::ZERO; l * cfg.head_out_dim()];
        for (src, dst) in dp
            .data()
            .chunks_exact(PATCH_CELLS * c)
            .zip(dout.chunks_exact_mut(PATCH_CELLS * stride))
        {
            for cell in 0..PATCH_CELLS {
                dst[cell * stride..cell * stride + c].copy_from_slice(&src[cell * c..(cell + 1) * c]);
            }
        }
        let mut du = vec![T::ZERO; l * d];
        linear_backward(&cache.u, l, &dout, &p.head, &mut g.head, Some(&mut du));

        let last = &cache.modulation.last;
        let mut dlast = vec![T::ZERO; 2 * d];
        let dxhat = modulate_backward(&du, &cache.xhat, &last[d..], d, &mut dlast);
        let mut dx = vec![T::ZERO; l * d];
        layer_norm_rows_backward(&dxhat, &cache.xhat, &cache.rstd, d, &mut dx);

        let mut dsc = vec![T::ZERO; d];
        linear_backward(
            &cache.time.sc,
            1,
            &dlast,
            &p.final_modulation,
            &mut g.final_modulation,
            Some(&mut dsc),
        );

        let mut dshared = vec![T::ZERO; 6 * d];
        for i in (0..p.blocks.len()).rev() {
            let mut dmod = vec![T::ZERO; 6 * d];
            dx = block_backward(
                &p.blocks[i],
                &mut g.blocks[i],
                &cache.blocks[i],
                &cache.modulation.blocks[i],
                &cache.rope,
                &dx,
                l,
                d,
                cfg.num_heads,
                &mut dmod,
            );
            add_into(g.blocks[i].modulation.data_mut(), &dmod);
            add_into(&mut dshared, &dmod);
        }
        if let (Some(shared), Some(gs)) = (&p.block_modulation, g.block_modulation.as_mut()) {
            let mut part = vec![T::ZERO; d];
            linear_backward(&cache.time.sc, 1, &dshared, shared, gs, Some(&mut part));
            add_into(&mut dsc, &part);
        }

        // Timestep MLP.
        let t = &cache.time;
        let dc: Vec<T> = dsc.iter().zip(&t.c).map(|(&gv, &cv)| gv * silu_grad(cv)).collect();
        let mut da1 = vec![T::ZERO; d];
        linear_backward(&t.a1, 1, &dc, &p.time_fc2, &mut g.time_fc2, Some(&mut da1));
        let dh1: Vec<T> = da1.iter().zip(&t.h1).map(|(&gv, &hv)| gv * silu_grad(hv)).collect();
        linear_backward(&t.freq, 1, &dh1, &p.time_fc1, &mut g.time_fc1, None);

        // Embedders all receive the gradient of the fused tokens.
        linear_backward(&cache.px, l, &dx, &p.embed_noise, &mut g.embed_noise, None);
        linear_backward(&cache.py, l, &dx, &p.embed_latent, &mut g.embed_latent, None);
        linear_backward(&cache.pm, l, &dx, &p.embed_mask, &mut g.embed_mask, None);
        Ok(g)
    }
}

/// Which input stream a patch embedding belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Noise,
    Latent,
    Mask,
}

/// One transformer block on `[L, D]` tokens with a `6D` modulation vector.
pub fn block_forward<T: Scalar>(
    block: &BlockParams<T>,
    tokens: &TokenSequence<T>,
    modulation: &[T],
    rope: &RopeTable<T>,
    num_heads: usize,
) -> Result<TokenSequence<T>> {
    let (l, d) = (tokens.len(), tokens.dim());
    if modulation.len() != 6 * d || block.qkv.fan_in() != d || rope.len() != l || d % num_heads != 0 {
        return Err(Error::invalid_shape(
            tokens.tokens.shape(),
            format!("block expects width {}, {} rope rows", block.qkv.fan_in(), rope.len()),
        ));
    }
    let (x, _) = block_forward_raw(block, tokens.tokens.data(), l, d, num_heads, modulation, rope, false);
    Ok(TokenSequence {
        tokens: Tensor::from_vec(&[l, d], x)?,
        grid: tokens.grid,
    })
}

#[derive(Debug, Clone)]
struct TimeCache<T> {
    freq: Vec<T>,
    h1: Vec<T>,
    a1: Vec<T>,
    c: Vec<T>,
    sc: Vec<T>,
}

#[derive(Debug, Clone)]
struct ForwardCache<T: Scalar> {
    px: Vec<T>,
    py: Vec<T>,
    pm: Vec<T>,
    time: TimeCache<T>,
    modulation: Modulation<T>,
    rope: RopeTable<T>,
    blocks: Vec<BlockCache<T>>,
    xhat: Vec<T>,
    rstd: Vec<T>,
    u: Vec<T>,
    grid: TokenGrid,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    xhat1: Vec<T>,
    rstd1: Vec<T>,
    u1: Vec<T>,
    /// Rotated queries and keys, values and attention weights, head-major.
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    p: Vec<T>,
    o: Vec<T>,
    a: Vec<T>,
    xhat2: Vec<T>,
    rstd2: Vec<T>,
    u2: Vec<T>,
    h: Vec<T>,
    act: Vec<T>,
    f: Vec<T>,
}

fn part<T>(m: &[T], k: usize, d: usize) -> &[T] {
    &m[k * d..(k + 1) * d]
}

fn add_into<T: Scalar>(acc: &mut [T], x: &[T]) {
    for (a, &b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

/// `x W + b` for `rows` rows of `x`.
fn linear<T: Scalar>(x: &[T], rows: usize, lin: &Linear<T>) -> Vec<T> {
    let (fi, fo) = (lin.fan_in(), lin.fan_out());
    let mut out = Vec::with_capacity(rows * fo);
    for _ in 0..rows {
        out.extend_from_slice(lin.bias.data());
    }
    T::gemm(rows, fi, fo, x, false, lin.weight.data(), false, T::ONE, &mut out);
    out
}

/// Accumulates weight and bias gradients; overwrites `dx` when given.
fn linear_backward<T: Scalar>(
    x: &[T],
    rows: usize,
    dy: &[T],
    lin: &Linear<T>,
    grad: &mut Linear<T>,
    dx: Option<&mut Vec<T>>,
) {
    let (fi, fo) = (lin.fan_in(), lin.fan_out());
    T::gemm(fi, rows, fo, x, true, dy, false, T::ONE, grad.weight.data_mut());
    let gb = grad.bias.data_mut();
    for row in dy.chunks_exact(fo) {
        add_into(gb, row);
    }
    if let Some(dx) = dx {
        dx.resize(rows * fi, T::ZERO);
        T::gemm(rows, fo, fi, dy, false, lin.weight.data(), true, T::ZERO, dx);
    }
}

/// `xhat * (1 + scale) + shift`, broadcast over rows.
fn modulate<T: Scalar>(xhat: &[T], shift: &[T], scale: &[T], d: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(xhat.len());
    for row in xhat.chunks_exact(d) {
        for j in 0..d {
            out.push(row[j] * (T::ONE + scale[j]) + shift[j]);
        }
    }
    out
}

/// Returns `dxhat`; writes `[dshift, dscale]` into `dmod` (`2D` wide).
fn modulate_backward<T: Scalar>(du: &[T], xhat: &[T], scale: &[T], d: usize, dmod: &mut [T]) -> Vec<T> {
    let mut dxhat = Vec::with_capacity(du.len());
    for (g, xh) in du.chunks_exact(d).zip(xhat.chunks_exact(d)) {
        for j in 0..d {
            dmod[j] += g[j];
            dmod[d + j] += g[j] * xh[j];
            dxhat.push(g[j] * (T::ONE + scale[j]));
        }
    }
    dxhat
}

/// `x + gate * y`, broadcast over rows.
fn gated_residual<T: Scalar>(x: &[T], gate: &[T], y: &[T], d: usize) -> Vec<T> {
    x.iter()
        .zip(y)
        .enumerate()
        .map(|(i, (&a, &b))| a + gate[i % d] * b)
        .collect()
}

/// Copies `width` columns starting at `col` out of a `stride`-wide matrix.
fn gather_cols<T: Scalar>(src: &[T], stride: usize, col: usize, width: usize) -> Vec<T> {
    src.chunks_exact(stride)
        .flat_map(|r| &r[col..col + width])
        .copied()
        .collect()
}

fn scatter_cols<T: Scalar>(dst: &mut [T], stride: usize, col: usize, src: &[T]) {
    let width = src.len() / (dst.len() / stride);
    for (r, s) in dst.chunks_exact_mut(stride).zip(src.chunks_exact(width)) {
        r[col..col + width].copy_from_slice(s);
    }
}

#[allow(clippy::too_many_arguments)]
fn block_forward_raw<T: Scalar>(
    b: &BlockParams<T>,
    x: &[T],
    l: usize,
    d: usize,
    heads: usize,
    m: &[T],
    rope: &RopeTable<T>,
    keep: bool,
) -> (Vec<T>, Option<BlockCache<T>>) {
    let mut xhat1 = vec![T::ZERO; l * d];
    let mut rstd1 = vec![T::ZERO; l];
    layer_norm_rows(x, d, &mut xhat1, &mut rstd1);
    let u1 = modulate(&xhat1, part(m, SHIFT_ATTN, d), part(m, SCALE_ATTN, d), d);
    let qkv = linear(&u1, l, &b.qkv);

    let hd = d / heads;
    let scale = T::from_f64(1.0 / (hd as f64).sqrt());
    let mut o = vec![T::ZERO; l * d];
    let (mut qs, mut ks, mut vs, mut ps) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for h in 0..heads {
        let mut q = gather_cols(&qkv, 3 * d, h * hd, hd);
        let mut k = gather_cols(&qkv, 3 * d, d + h * hd, hd);
        let v = gather_cols(&qkv, 3 * d, 2 * d + h * hd, hd);
        rope.apply(&mut q);
        rope.apply(&mut k);
        let mut s = vec![T::ZERO; l * l];
        T::gemm(l, hd, l, &q, false, &k, true, T::ZERO, &mut s);
        for v in &mut s {
            *v *= scale;
        }
        softmax_rows(&mut s, l);
        let mut oh = vec![T::ZERO; l * hd];
        T::gemm(l, l, hd, &s, false, &v, false, T::ZERO, &mut oh);
        scatter_cols(&mut o, d, h * hd, &oh);
        if keep {
            qs.extend(q);
            ks.extend(k);
            vs.extend(v);
            ps.extend(s);
        }
    }
    let a = linear(&o, l, &b.proj);
    let x2 = gated_residual(x, part(m, GATE_ATTN, d), &a, d);

    let mut xhat2 = vec![T::ZERO; l * d];
    let mut rstd2 = vec![T::ZERO; l];
    layer_norm_rows(&x2, d, &mut xhat2, &mut rstd2);
    let u2 = modulate(&xhat2, part(m, SHIFT_FFN, d), part(m, SCALE_FFN, d), d);
    let h = linear(&u2, l, &b.fc1);
    let act: Vec<T> = h.iter().map(|&v| gelu(v)).collect();
    let f = linear(&act, l, &b.fc2);
    let x3 = gated_residual(&x2, part(m, GATE_FFN, d), &f, d);

    let cache = keep.then_some(BlockCache {
        xhat1,
        rstd1,
        u1,
        q: qs,
        k: ks,
        v: vs,
        p: ps,
        o,
        a,
        xhat2,
        rstd2,
        u2,
        h,
        act,
        f,
    });
    (x3, cache)
}

/// Returns the gradient with respect to the block input; accumulates
/// parameter gradients into `g` and the modulation gradient into `dmod`.
#[allow(clippy::too_many_arguments)]
fn block_backward<T: Scalar>(
    b: &BlockParams<T>,
    g: &mut BlockParams<T>,
    c: &BlockCache<T>,
    m: &[T],
    rope: &RopeTable<T>,
    dx3: &[T],
    l: usize,
    d: usize,
    heads: usize,
    dmod: &mut [T],
) -> Vec<T> {
    // Feed-forward branch.
    let gate_f = part(m, GATE_FFN, d);
    let mut df = vec![T::ZERO; l * d];
    for (i, (&gv, &fv)) in dx3.iter().zip(&c.f).enumerate() {
        dmod[GATE_FFN * d + i % d] += gv * fv;
        df[i] = gv * gate_f[i % d];
    }
    let mut dact = Vec::new();
    linear_backward(&c.act, l, &df, &b.fc2, &mut g.fc2, Some(&mut dact));
    let dh: Vec<T> = dact.iter().zip(&c.h).map(|(&gv, &hv)| gv * gelu_grad(hv)).collect();
    let mut du2 = Vec::new();
    linear_backward(&c.u2, l, &dh, &b.fc1, &mut g.fc1, Some(&mut du2));
    let dxhat2 = modulate_backward(
        &du2,
        &c.xhat2,
        part(m, SCALE_FFN, d),
        d,
        &mut dmod[SHIFT_FFN * d..(SCALE_FFN + 1) * d],
    );
    let mut dx2 = vec![T::ZERO; l * d];
    layer_norm_rows_backward(&dxhat2, &c.xhat2, &c.rstd2, d, &mut dx2);
    add_into(&mut dx2, dx3);

    // Attention branch.
    let gate_a = part(m, GATE_ATTN, d);
    let mut da = vec![T::ZERO; l * d];
    for (i, (&gv, &av)) in dx2.iter().zip(&c.a).enumerate() {
        dmod[GATE_ATTN * d + i % d] += gv * av;
        da[i] = gv * gate_a[i % d];
    }
    let mut d_o = Vec::new();
    linear_backward(&c.o, l, &da, &b.proj, &mut g.proj, Some(&mut d_o));

    let hd = d / heads;
    let scale = T::from_f64(1.0 / (hd as f64).sqrt());
    let mut dqkv = vec![T::ZERO; l * 3 * d];
    for h in 0..heads {
        let q = &c.q[h * l * hd..(h + 1) * l * hd];
        let k = &c.k[h * l * hd..(h + 1) * l * hd];
        let v = &c.v[h * l * hd..(h + 1) * l * hd];
        let p = &c.p[h * l * l..(h + 1) * l * l];
        let doh = gather_cols(&d_o, d, h * hd, hd);
        let mut dp = vec![T::ZERO; l * l];
        T::gemm(l, hd, l, &doh, false, v, true, T::ZERO, &mut dp);
        let mut dv = vec![T::ZERO; l * hd];
        T::gemm(l, l, hd, p, true, &doh, false, T::ZERO, &mut dv);
        // Softmax backward, folded with the logit scale.
        for (dr, pr) in dp.chunks_exact_mut(l).zip(p.chunks_exact(l)) {
            let dot: T = dr.iter().zip(pr).map(|(&a, &b)| a * b).sum();
            for (dv, &pv) in dr.iter_mut().zip(pr) {
                *dv = pv * (*dv - dot) * scale;
            }
        }
        let mut dq = vec![T::ZERO; l * hd];
        T::gemm(l, l, hd, &dp, false, k, false, T::ZERO, &mut dq);
        let mut dk = vec![T::ZERO; l * hd];
        T::gemm(l, l, hd, &dp, true, q, false, T::ZERO, &mut dk);
        rope.apply_transpose(&mut dq);
        rope.apply_transpose(&mut dk);
        scatter_cols(&mut dqkv, 3 * d, h * hd, &dq);
        scatter_cols(&mut dqkv, 3 * d, d + h * hd, &dk);
        scatter_cols(&mut dqkv, 3 * d, 2 * d + h * hd, &dv);
    }
    let mut du1 = Vec::new();
    linear_backward(&c.u1, l, &dqkv, &b.qkv, &mut g.qkv, Some(&mut du1));
    let dxhat1 = modulate_backward(
        &du1,
        &c.xhat1,
        part(m, SCALE_ATTN, d),
        d,
        &mut dmod[SHIFT_ATTN * d..(SCALE_ATTN + 1) * d],
    );
    let mut dx = vec![T::ZERO; l * d];
    layer_norm_rows_backward(&dxhat1, &c.xhat1, &c.rstd1, d, &mut dx);
    add_into(&mut dx, &dx2);
    dx
}
