use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

/// Largest admissible β.
pub const MAX_BETA: f64 = 0.999;

/// Default cosine offset `s`.
pub const COSINE_OFFSET: f64 = 0.008;

/// β_t, α_t, ᾱ_t and the posterior variance β̃_t for t = 1..=T.
///
/// ᾱ is always the running product of the (clipped) α values, with ᾱ_0 = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior: Vec<f64>,
}

/// Squared-cosine signal level `f(t)`.
pub fn cosine_level(t: f64, steps: usize, s: f64) -> f64 {
    ((t / steps as f64 + s) / (1.0 + s) * FRAC_PI_2).cos().powi(2)
}

impl NoiseSchedule {
    pub fn cosine(steps: usize, s: f64) -> Result<Self> {
        if steps < 2 || !(s > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cosine schedule needs T >= 2 and s > 0, got T = {steps}, s = {s}"
            )));
        }
        let f0 = cosine_level(0.0, steps, s);
        let abar = |t: usize| cosine_level(t as f64, steps, s) / f0;
        let betas = (1..=steps)
            .map(|t| (1.0 - abar(t) / abar(t - 1)).min(MAX_BETA))
            .collect();
        Self::from_betas(betas)
    }

    /// Schedule from explicit β values (`0 <= β <= MAX_BETA`).
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidArgument("empty schedule".into()));
        }
        if let Some((i, b)) = betas.iter().enumerate().find(|(_, b)| !(0.0..=MAX_BETA).contains(*b)) {
            return Err(Error::InvalidArgument(format!("beta_{} = {b} outside [0, {MAX_BETA}]", i + 1)));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        for b in &betas {
            let prev = *alpha_bars.last().unwrap();
            alpha_bars.push(prev * (1.0 - b));
        }
        let posterior = betas
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let denom = 1.0 - alpha_bars[i + 1];
                if denom > 0.0 {
                    b * (1.0 - alpha_bars[i]) / denom
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Self {
            betas,
            alpha_bars,
            posterior,
        })
    }

    /// T.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub(crate) fn check_step(&self, t: usize, allow_zero: bool) -> Result<()> {
        let lo = usize::from(!allow_zero);
        if t < lo || t > self.steps() {
            return Err(Error::InvalidArgument(format!(
                "timestep {t} outside {lo}..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    /// β_t for 1 <= t <= T.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    /// ᾱ_t for 0 <= t <= T.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// β̃_t = β_t (1 - ᾱ_{t-1}) / (1 - ᾱ_t); zero at t = 1.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.posterior[t - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_basics() {
        let s = NoiseSchedule::cosine(400, COSINE_OFFSET).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!(s.alpha_bar(400) < 1e-3);
        assert!((1..=400).all(|t| s.alpha_bar(t) < s.alpha_bar(t - 1)));
        assert!((1..=400).all(|t| s.beta(t) > 0.0 && s.beta(t) <= MAX_BETA));
        assert_eq!(s.posterior_variance(1), 0.0);
        assert!((2..=400).all(|t| s.posterior_variance(t) > 0.0 && s.posterior_variance(t) <= s.beta(t)));
        assert!(NoiseSchedule::cosine(1, COSINE_OFFSET).is_err());
    }

    #[test]
    fn hand_built() {
        let s = NoiseSchedule::from_betas(vec![0.0, 0.5]).unwrap();
        assert_eq!(s.alpha_bar(2), 0.5);
        assert!(NoiseSchedule::from_betas(vec![1.0]).is_err());
        assert!(s.check_step(0, false).is_err() && s.check_step(0, true).is_ok());
        assert!(s.check_step(3, true).is_err());
    }
}
