use crate::numerics::Scalar;

/// Timesteps in `[0, 1]` are scaled by this before the sinusoids so the
/// fastest frequency still resolves small differences in `t`.
pub const TIME_SCALE: f64 = 1000.0;
const MAX_PERIOD: f64 = 10_000.0;

/// Sinusoidal frequency embedding `[cos(f_i s), sin(f_i s)]` of
/// `s = 1000 t`, with `f_i = 10000^(-i / (dim/2))`.
pub fn timestep_frequencies<T: Scalar>(t: f64, dim: usize) -> Vec<T> {
    let half = dim / 2;
    let s = t * TIME_SCALE;
    let mut out = vec![T::ZERO; dim];
    for i in 0..half {
        let f = (-MAX_PERIOD.ln() * i as f64 / half as f64).exp();
        out[i] = T::from_f64((s * f).cos());
        out[half + i] = T::from_f64((s * f).sin());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_time_is_cos_ones() {
        let e: Vec<f64> = timestep_frequencies(0.0, 8);
        assert_eq!(e, vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn endpoints_differ_and_repeat() {
        let a: Vec<f64> = timestep_frequencies(0.0, 256);
        let b: Vec<f64> = timestep_frequencies(1.0, 256);
        let dist: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
        assert!(dist > 1.0, "{dist}");
        assert_eq!(b, timestep_frequencies::<f64>(1.0, 256));
    }
}
