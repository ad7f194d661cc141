//! Forward noising, its closed-form marginal, and the reverse step.

use rand_distr::StandardNormal;

use super::NoiseSchedule;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn standard_normal<T: Scalar>(shape: &[usize], rng: &mut impl rand::Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal)))
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// One noising step: `sqrt(1 - β_t) x + sqrt(β_t) z`.
pub fn forward_step<T: Scalar>(
    x_prev: &Tensor<T>,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut impl rand::Rng,
) -> Result<Tensor<T>> {
    sched.check_step(t, false)?;
    let (a, b) = (sched.alpha(t).sqrt(), sched.beta(t).sqrt());
    let data = x_prev
        .data()
        .iter()
        .map(|&x| {
            let z: f64 = rng.sample(StandardNormal);
            T::from_f64_lossy(a * x.as_f64() + b * z)
        })
        .collect();
    Tensor::new(x_prev.shape(), data)
}

/// `sqrt(ᾱ_t) x0 + sqrt(1 - ᾱ_t) eps`, for 0 <= t <= T.
pub fn forward_marginal<T: Scalar>(
    x0: &Tensor<T>,
    t: usize,
    eps: &Tensor<T>,
    sched: &NoiseSchedule,
) -> Result<Tensor<T>> {
    sched.check_step(t, true)?;
    same_shape("forward_marginal", x0, eps)?;
    if t == 0 {
        return Ok(x0.clone());
    }
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = x0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| T::from_f64_lossy(a * x.as_f64() + b * e.as_f64()))
        .collect();
    Tensor::new(x0.shape(), data)
}

/// Mean of the reverse step: `(x_t - β_t / sqrt(1 - ᾱ_t) eps_hat) / sqrt(α_t)`.
pub fn reverse_mean<T: Scalar>(
    x_t: &Tensor<T>,
    t: usize,
    eps_hat: &Tensor<T>,
    sched: &NoiseSchedule,
) -> Result<Tensor<T>> {
    sched.check_step(t, false)?;
    same_shape("reverse_step", x_t, eps_hat)?;
    let coef = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let scale = 1.0 / sched.alpha(t).sqrt();
    let data = x_t
        .data()
        .iter()
        .zip(eps_hat.data())
        .map(|(&x, &e)| T::from_f64_lossy(scale * (x.as_f64() - coef * e.as_f64())))
        .collect();
    Tensor::new(x_t.shape(), data)
}

/// Reverse step with fixed variance β̃_t; no noise is added at t = 1.
pub fn reverse_step<T: Scalar>(
    x_t: &Tensor<T>,
    t: usize,
    eps_hat: &Tensor<T>,
    sched: &NoiseSchedule,
    rng: &mut impl rand::Rng,
) -> Result<Tensor<T>> {
    let mut mean = reverse_mean(x_t, t, eps_hat, sched)?;
    if t > 1 {
        let sd = sched.posterior_variance(t).sqrt();
        for v in mean.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = T::from_f64_lossy(v.as_f64() + sd * z);
        }
    }
    Ok(mean)
}
