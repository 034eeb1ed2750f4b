use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Central-difference gradient of a scalar function, one coordinate at a time.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor<f64>, eps: f64) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "finite difference step must be positive, got {eps}"
        )));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape())?;
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective at coordinate {i}: f(x+eps)={plus}, f(x-eps)={minus}"
            )));
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

/// Outcome of comparing an analytic gradient against a numerical one.
#[derive(Debug, Clone, Copy)]
pub struct GradAgreement {
    /// Coordinates whose magnitude exceeded the significance floor.
    pub significant: usize,
    /// Of those, how many met the relative tolerance.
    pub within_tolerance: usize,
    pub worst_relative_error: f64,
}

impl GradAgreement {
    pub fn fraction(&self) -> f64 {
        if self.significant == 0 {
            1.0
        } else {
            self.within_tolerance as f64 / self.significant as f64
        }
    }
}

/// Relative error `|a - n| / max(|a|, |n|)` over coordinates where either
/// gradient exceeds `floor` in magnitude.
pub fn compare_gradients(analytic: &[f64], numeric: &[f64], floor: f64, rel_tol: f64) -> GradAgreement {
    let mut out = GradAgreement {
        significant: 0,
        within_tolerance: 0,
        worst_relative_error: 0.0,
    };
    for (&a, &n) in analytic.iter().zip(numeric) {
        let scale = a.abs().max(n.abs());
        if scale <= floor {
            continue;
        }
        let rel = (a - n).abs() / scale;
        out.significant += 1;
        if rel < rel_tol {
            out.within_tolerance += 1;
        }
        out.worst_relative_error = out.worst_relative_error.max(rel);
    }
    out
}
