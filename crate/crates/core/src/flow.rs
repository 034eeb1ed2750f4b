//! Flow matching on the linear path `x_t = t x1 + (1 - t) x0` from noise
//! (`t = 0`) to data (`t = 1`), and the uniform-grid Euler sampler.

use crate::codec::Latent;
use crate::error::{Error, Result};
use crate::numerics::ops::sigmoid;
use crate::numerics::{sample_gaussian, RngStream, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerConfig {
    pub num_steps: usize,
    /// Logit-normal location.
    pub mu: f64,
    /// Logit-normal scale.
    pub sigma: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            num_steps: 4,
            mu: 0.0,
            sigma: 1.0,
        }
    }
}

impl SchedulerConfig {
    pub fn with_steps(num_steps: usize) -> Self {
        SchedulerConfig {
            num_steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_steps == 0 {
            return Err(Error::Config("num_steps must be at least 1".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) || !self.mu.is_finite() {
            return Err(Error::Config(format!(
                "logit-normal parameters must be finite with sigma > 0, got mu={} sigma={}",
                self.mu, self.sigma
            )));
        }
        Ok(())
    }

    /// Left endpoints `i / K` of the integration grid.
    pub fn grid(&self) -> Vec<f64> {
        (0..self.num_steps).map(|i| i as f64 / self.num_steps as f64).collect()
    }
}

/// `t = sigmoid(mu + sigma z)` with `z` standard normal.
pub fn sample_timestep(rng: &mut RngStream, cfg: &SchedulerConfig) -> f64 {
    sigmoid(cfg.mu + cfg.sigma * rng.normal())
}

fn blend<T: Scalar>(a: &Tensor<T>, wa: T, b: &Tensor<T>, wb: T, op: &'static str) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| wa * x + wb * y).collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn interpolate<T: Scalar>(x0: &Latent<T>, x1: &Latent<T>, t: f64) -> Result<Latent<T>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("t must lie in [0, 1], got {t}")));
    }
    // Written as x0 + t (x1 - x0) would not hit x1 exactly at t = 1.
    let out = blend(
        x1.tensor(),
        T::from_f64(t),
        x0.tensor(),
        T::from_f64(1.0 - t),
        "interpolate",
    )?;
    Latent::from_tensor(out)
}

/// `x1 - x0`, independent of `t`.
pub fn velocity_target<T: Scalar>(x0: &Latent<T>, x1: &Latent<T>) -> Result<Latent<T>> {
    Latent::from_tensor(blend(x1.tensor(), T::ONE, x0.tensor(), -T::ONE, "velocity target")?)
}

/// Mean squared error over all elements.
pub fn fm_loss<T: Scalar>(prediction: &Latent<T>, target: &Latent<T>) -> Result<f64> {
    prediction.same_dims(target, "fm loss")?;
    let total: f64 = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t).to_f64().powi(2))
        .sum();
    Ok(total / prediction.data().len() as f64)
}

/// One Euler update `x += dt v` in place. The state is kept in f64 so that
/// power-of-two step sizes accumulate without rounding.
pub(crate) fn euler_step(x: &mut Latent<f64>, v: &Latent<f32>, dt: f64, step: usize) -> Result<()> {
    if x.tensor().shape() != v.tensor().shape() {
        return Err(Error::ShapeMismatch {
            op: "euler step",
            lhs: x.tensor().shape().to_vec(),
            rhs: v.tensor().shape().to_vec(),
        });
    }
    for (a, &b) in x.data_mut().iter_mut().zip(v.data()) {
        *a += dt * b as f64;
    }
    if !x.tensor().all_finite() {
        return Err(Error::NonFinite(format!("sampler state after step {step}")));
    }
    Ok(())
}

/// Integrates `dx/dt = velocity(x, t)` from Gaussian noise at `t = 0` to
/// `t = 1` with `K` uniform Euler steps. `y` and `m` are passed through to
/// the velocity function unchanged.
pub fn euler_sample<F>(
    mut velocity: F,
    y: &Latent<f32>,
    m: &Latent<f32>,
    shape: &[usize],
    cfg: &SchedulerConfig,
    rng: &mut RngStream,
) -> Result<Latent<f32>>
where
    F: FnMut(&Latent<f32>, &Latent<f32>, &Latent<f32>, f64) -> Result<Latent<f32>>,
{
    cfg.validate()?;
    let noise: Latent<f32> = Latent::from_tensor(sample_gaussian(rng, shape)?)?;
    let mut x = noise.cast::<f64>();
    let dt = 1.0 / cfg.num_steps as f64;
    for (i, t) in cfg.grid().into_iter().enumerate() {
        let v = velocity(&x.cast(), y, m, t)?;
        euler_step(&mut x, &v, dt, i)?;
    }
    Ok(x.cast())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Latent<f64> {
        Latent::from_tensor(Tensor::from_vec(&[1, 1, 1, 1], vec![v]).unwrap()).unwrap()
    }

    #[test]
    fn closed_forms() {
        assert_eq!(interpolate(&scalar(0.0), &scalar(2.0), 0.25).unwrap().data(), &[0.5]);
        assert_eq!(velocity_target(&scalar(1.0), &scalar(3.0)).unwrap().data(), &[2.0]);
        assert_eq!(fm_loss(&scalar(1.0), &scalar(3.0)).unwrap(), 4.0);
    }

    #[test]
    fn endpoints_are_exact() {
        let mut rng = RngStream::new(0, 0);
        let a = Latent::from_tensor(sample_gaussian::<f64>(&mut rng, &[2, 2, 2, 8]).unwrap()).unwrap();
        let b = Latent::from_tensor(sample_gaussian::<f64>(&mut rng, &[2, 2, 2, 8]).unwrap()).unwrap();
        assert_eq!(interpolate(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interpolate(&a, &b, 1.0).unwrap(), b);
        let ab = velocity_target(&a, &b).unwrap();
        let ba = velocity_target(&b, &a).unwrap();
        assert_eq!(ab.tensor().scale(-1.0), *ba.tensor());
        assert!(velocity_target(&a, &a).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(interpolate(&a, &b, 1.5).is_err());
    }

    #[test]
    fn rejects_bad_scheduler() {
        assert!(SchedulerConfig::with_steps(0).validate().is_err());
        let cfg = SchedulerConfig {
            sigma: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert_eq!(SchedulerConfig::with_steps(4).grid(), vec![0.0, 0.25, 0.5, 0.75]);
    }

    #[test]
    fn zero_velocity_returns_noise() {
        let z = Latent::<f32>::zeros(2, 2, 2, 8).unwrap();
        let m = Latent::<f32>::zeros(2, 2, 2, 4).unwrap();
        let shape = [2, 2, 2, 8];
        let out = euler_sample(
            |x, _, _, _| Latent::zeros(x.frames(), x.height(), x.width(), 8),
            &z,
            &m,
            &shape,
            &SchedulerConfig::with_steps(8),
            &mut RngStream::new(5, 1),
        )
        .unwrap();
        let noise: Tensor<f32> = sample_gaussian(&mut RngStream::new(5, 1), &shape).unwrap();
        assert_eq!(out.tensor(), &noise);
    }

    #[test]
    fn non_finite_state_names_the_step() {
        let z = Latent::<f32>::zeros(1, 2, 2, 8).unwrap();
        let m = Latent::<f32>::zeros(1, 2, 2, 4).unwrap();
        let mut calls = 0;
        let err = euler_sample(
            |x, _, _, _| {
                calls += 1;
                let v = if calls == 3 { f32::INFINITY } else { 0.0 };
                Latent::from_tensor(Tensor::full(x.tensor().shape(), v)?)
            },
            &z,
            &m,
            &[1, 2, 2, 8],
            &SchedulerConfig::with_steps(4),
            &mut RngStream::new(0, 0),
        )
        .unwrap_err();
        assert!(err.to_string().contains("step 2"), "{err}");
    }
}
