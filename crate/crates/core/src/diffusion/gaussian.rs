//! Pixel-i.i.d. Gaussian data, for which the optimal ε predictor and its
//! error are known in closed form. Used to check samplers and training.

use rand_distr::{Distribution, Normal};

use super::model::EpsilonModel;
use super::NoiseSchedule;
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Scalar, Tape, Tensor, Var};

/// Every pixel independently `N(mean, sd²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianData {
    pub mean: f64,
    pub sd: f64,
}

impl GaussianData {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !mean.is_finite() || !(sd > 0.0 && sd.is_finite()) {
            return Err(Error::InvalidArgument(format!("gaussian data needs finite mean and sd > 0, got {mean}, {sd}")));
        }
        Ok(Self { mean, sd })
    }

    /// `E[ε | x_t]`. With `x_t = √ᾱ x0 + √(1−ᾱ) ε`, `x_t` is Gaussian with
    /// variance `ᾱ s² + 1 − ᾱ` and covariance `√(1−ᾱ)` with ε.
    pub fn optimal_eps(&self, x_t: f64, t: usize, sched: &NoiseSchedule) -> f64 {
        let ab = sched.alpha_bar(t);
        (1.0 - ab).sqrt() * (x_t - ab.sqrt() * self.mean) / self.marginal_var(ab)
    }

    /// `Var[ε | x_t] = ᾱ s² / (ᾱ s² + 1 − ᾱ)`: the per-pixel error of
    /// [`Self::optimal_eps`] at step `t`.
    pub fn residual_var(&self, t: usize, sched: &NoiseSchedule) -> f64 {
        let ab = sched.alpha_bar(t);
        ab * self.sd * self.sd / self.marginal_var(ab)
    }

    /// Smallest achievable ε-prediction MSE with `t ~ U{1..T}`.
    pub fn min_mse(&self, sched: &NoiseSchedule) -> f64 {
        let n = sched.steps();
        (1..=n).map(|t| self.residual_var(t, sched)).sum::<f64>() / n as f64
    }

    pub fn draw<T: Scalar>(&self, shape: &[usize], rng: &mut impl rand::Rng) -> Tensor<T> {
        let d = Normal::new(self.mean, self.sd).expect("validated sd");
        Tensor::from_fn(shape, |_| T::from_f64_lossy(d.sample(rng)))
    }

    fn marginal_var(&self, ab: f64) -> f64 {
        ab * self.sd * self.sd + 1.0 - ab
    }
}

/// [`GaussianData::optimal_eps`] as a parameter-free model.
#[derive(Debug, Clone)]
pub struct AnalyticEps<'a, T> {
    pub data: GaussianData,
    pub sched: &'a NoiseSchedule,
    store: ParamStore<T>,
}

impl<'a, T: Scalar> AnalyticEps<'a, T> {
    pub fn new(data: GaussianData, sched: &'a NoiseSchedule) -> Self {
        Self {
            data,
            sched,
            store: ParamStore::new(),
        }
    }
}

impl<T: Scalar> EpsilonModel<T> for AnalyticEps<'_, T> {
    fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn forward(&self, tape: &mut Tape<T>, x: Var, t: &[usize]) -> Result<Var> {
        let xt = tape.value(x).clone();
        let n = xt.shape().first().copied().unwrap_or(0);
        if n != t.len() || n == 0 {
            return Err(Error::shape("analytic eps", xt.shape(), &[t.len()]));
        }
        let per = xt.len() / n;
        let eps = Tensor::from_fn(xt.shape(), |i| {
            T::from_f64_lossy(self.data.optimal_eps(xt.data()[i].as_f64(), t[i / per], self.sched))
        });
        Ok(tape.input(eps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{ddpm_loss_at, standard_normal, COSINE_OFFSET};
    use crate::seed::rng;

    #[test]
    fn residual_variance_limits() {
        let s = NoiseSchedule::cosine(400, COSINE_OFFSET).unwrap();
        let g = GaussianData::new(0.2, 0.5).unwrap();
        assert!(g.residual_var(1, &s) > 0.99);
        assert!(g.residual_var(400, &s) < 1e-3);
        let m = g.min_mse(&s);
        assert!(m > 0.0 && m < 1.0);
        assert!(GaussianData::new(0.0, 0.0).is_err());
    }

    #[test]
    fn analytic_predictor_attains_the_minimum() {
        let s = NoiseSchedule::cosine(400, COSINE_OFFSET).unwrap();
        let g = GaussianData::new(0.2, 0.5).unwrap();
        let model = AnalyticEps::<f64>::new(g, &s);
        let mut r = rng(3);
        let (n, px) = (400, 256);
        let x0 = g.draw::<f64>(&[n, 1, 1, px], &mut r);
        let t: Vec<usize> = (0..n).map(|i| i + 1).collect();
        let eps = standard_normal(&[n, 1, 1, px], &mut r);
        let (mse, _) = ddpm_loss_at(&model, &x0, &s, &t, &eps).unwrap();
        let min = g.min_mse(&s);
        assert!((mse - min).abs() < 0.02 * min, "{mse} vs {min}");
    }
}
