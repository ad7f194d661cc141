use rand::Rng as _;
use rand_distr::StandardNormal;

use super::NoiseSchedule;
use crate::data::Image;
use crate::error::{Error, Result};
use crate::seed::rng;

/// Histogram range in the diffusion domain.
pub const HIST_RANGE: (f64, f64) = (-4.0, 4.0);

/// Normalized histogram over [`HIST_RANGE`]; out-of-range values land in the
/// edge bins.
pub fn histogram(values: impl Iterator<Item = f64>, bins: usize) -> Vec<f64> {
    let (lo, hi) = HIST_RANGE;
    let mut h = vec![0.0; bins];
    let mut n = 0usize;
    for v in values {
        let k = ((v - lo) / (hi - lo) * bins as f64).floor();
        h[k.clamp(0.0, (bins - 1) as f64) as usize] += 1.0;
        n += 1;
    }
    for v in &mut h {
        *v /= n as f64;
    }
    h
}

fn noised(set: &[Image], t: usize, sched: &NoiseSchedule, seed: u64) -> Vec<f64> {
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut rng = rng(seed);
    set.iter()
        .flat_map(|img| img.to_signed())
        .map(|x| a * x + b * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// L1 distance between the histograms of the two sets after noising both to
/// timestep `t`. Both sets draw their noise from the same seed.
pub fn histogram_divergence(
    real: &[Image],
    sketches: &[Image],
    t: usize,
    sched: &NoiseSchedule,
    bins: usize,
    seed: u64,
) -> Result<f64> {
    if real.is_empty() || sketches.is_empty() || bins < 8 {
        return Err(Error::InvalidArgument(
            "histogram divergence needs two non-empty sets and >= 8 bins".into(),
        ));
    }
    sched.check_step(t, true)?;
    let hr = histogram(noised(real, t, sched, seed).into_iter(), bins);
    let hs = histogram(noised(sketches, t, sched, seed).into_iter(), bins);
    Ok(hr.iter().zip(&hs).map(|(a, b)| (a - b).abs()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_is_normalized() {
        let h = histogram([-10.0, -4.0, 0.0, 3.99, 10.0].into_iter(), 8);
        assert_eq!(h, vec![0.4, 0.0, 0.0, 0.0, 0.2, 0.0, 0.0, 0.4]);
    }

    #[test]
    fn identical_sets_give_zero() {
        let s = NoiseSchedule::cosine(400, 0.008).unwrap();
        let img = Image::new(2, 2, vec![0.1, 0.4, 0.9, 0.5]).unwrap();
        let set = vec![img.clone(), img];
        assert_eq!(histogram_divergence(&set, &set, 150, &s, 16, 3).unwrap(), 0.0);
        assert!(histogram_divergence(&set, &set, 150, &s, 4, 3).is_err());
    }
}
