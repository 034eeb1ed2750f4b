//! Elementwise activations and row-wise normalizations.
//!
//! The slice kernels (`*_rows`) are what the transformer uses on its hot path;
//! the `Tensor`-level wrappers validate shapes and allocate.

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x * Phi(x)`.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * x * (T::ONE + (x * T::from_f64(INV_SQRT_2)).erf())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let cdf = half * (T::ONE + (x * T::from_f64(INV_SQRT_2)).erf());
    let pdf = T::from_f64(INV_SQRT_2PI) * (-(half * x * x)).exp();
    cdf + x * pdf
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::ONE / (T::ONE + (-x).exp())
}

#[inline]
pub fn silu<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::ONE + x * (T::ONE - s))
}

/// Normalizes each `cols`-wide row of `x` into `xhat`, recording the inverse
/// standard deviation per row.
pub fn layer_norm_rows<T: Scalar>(x: &[T], cols: usize, xhat: &mut [T], rstd: &mut [T]) {
    let inv_cols = T::from_f64(1.0 / cols as f64);
    let eps = T::from_f64(LAYER_NORM_EPS);
    for ((row, out), r) in x
        .chunks_exact(cols)
        .zip(xhat.chunks_exact_mut(cols))
        .zip(rstd.iter_mut())
    {
        let mean = row.iter().copied().sum::<T>() * inv_cols;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_cols;
        let inv = T::ONE / (var + eps).sqrt();
        for (o, &v) in out.iter_mut().zip(row) {
            *o = (v - mean) * inv;
        }
        *r = inv;
    }
}

/// Backward of `layer_norm_rows` without affine terms. Overwrites `dx`.
pub fn layer_norm_rows_backward<T: Scalar>(dxhat: &[T], xhat: &[T], rstd: &[T], cols: usize, dx: &mut [T]) {
    let inv_cols = T::from_f64(1.0 / cols as f64);
    for (((g, xh), &r), out) in dxhat
        .chunks_exact(cols)
        .zip(xhat.chunks_exact(cols))
        .zip(rstd)
        .zip(dx.chunks_exact_mut(cols))
    {
        let mean_g = g.iter().copied().sum::<T>() * inv_cols;
        let mean_gx = g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() * inv_cols;
        for ((o, &gi), &xi) in out.iter_mut().zip(g).zip(xh) {
            *o = r * (gi - mean_g - xi * mean_gx);
        }
    }
}

/// In-place numerically stable softmax over each `cols`-wide row.
pub fn softmax_rows<T: Scalar>(x: &mut [T], cols: usize) {
    for row in x.chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(row[0], T::max);
        let mut total = T::ZERO;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        let inv = T::ONE / total;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

pub fn gelu_tensor<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu)
}

/// Layer norm over the last axis followed by an optional learned scale and
/// shift, each with the size of the last axis.
pub fn layer_norm<T: Scalar>(x: &Tensor<T>, scale: Option<&Tensor<T>>, shift: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let cols = *x.shape().last().expect("rank >= 1");
    for p in [scale, shift].into_iter().flatten() {
        if p.shape() != [cols] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: x.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
    }
    let mut out = Tensor::zeros(x.shape())?;
    let mut rstd = vec![T::ZERO; x.len() / cols];
    layer_norm_rows(x.data(), cols, out.data_mut(), &mut rstd);
    for row in out.data_mut().chunks_exact_mut(cols) {
        if let Some(s) = scale {
            row.iter_mut().zip(s.data()).for_each(|(v, &g)| *v *= g);
        }
        if let Some(b) = shift {
            row.iter_mut().zip(b.data()).for_each(|(v, &g)| *v += g);
        }
    }
    Ok(out)
}

/// Softmax along an arbitrary axis.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::invalid_shape(
            x.shape(),
            format!("softmax axis {axis} out of range"),
        ));
    }
    let dim = x.shape()[axis];
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let outer: usize = x.shape()[..axis].iter().product();
    let mut out = x.clone();
    let data = out.data_mut();
    let mut lane = vec![T::ZERO; dim];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * dim * inner + k * inner + i;
            for (k, l) in lane.iter_mut().enumerate() {
                *l = data[at(k)];
            }
            softmax_rows(&mut lane, dim);
            for (k, &l) in lane.iter().enumerate() {
                data[at(k)] = l;
            }
        }
    }
    Ok(out)
}
