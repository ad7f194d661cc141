//! Seeded procedural phantoms standing in for real labelled scans.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;

use super::image::{Image, LabelMask};
use super::layers::{repair_column, Boundaries, NUM_BANDS, NUM_BOUNDARIES};
use super::manifest::{DatasetManifest, ManifestEntry, Provenance, Split};
use super::pgm::{save_image, save_mask};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng, Rng};

/// Smallest height that fits six bands.
pub const MIN_HEIGHT: usize = 12;

/// Gaussian parameters of one geometric quantity, as fractions of the image
/// height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    pub height: usize,
    pub width: usize,
    /// Row of the topmost boundary.
    pub top: Spread,
    /// Thickness of RNFL, GCIPL, mid-retina and CL.
    pub thickness: [Spread; 4],
    /// Largest sinusoidal swing of the top boundary, fraction of height.
    pub top_swing: f64,
    /// Largest sinusoidal thickness ripple, fraction of each band's mean.
    pub ripple: f64,
    /// Base intensity of each band, top to bottom.
    pub intensity: [f64; NUM_BANDS],
    /// Per-image jitter of each band's intensity.
    pub intensity_sd: f64,
    /// Shape of the unit-mean gamma speckle.
    pub speckle_shape: f64,
    pub noise_sd: f64,
}

impl PhantomConfig {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            top: Spread { mean: 0.17, sd: 0.03 },
            thickness: [
                Spread { mean: 0.125, sd: 0.02 },
                Spread { mean: 0.11, sd: 0.015 },
                Spread { mean: 0.14, sd: 0.02 },
                Spread { mean: 0.16, sd: 0.02 },
            ],
            top_swing: 0.05,
            ripple: 0.15,
            intensity: [0.05, 0.75, 0.45, 0.3, 0.6, 0.1],
            intensity_sd: 0.04,
            speckle_shape: 4.0,
            noise_sd: 0.02,
        }
    }

    /// Configured mean thickness of RNFL, GCIPL, mid-retina and CL, in pixels.
    pub fn thickness_px(&self) -> [f64; 4] {
        self.thickness.map(|s| s.mean * self.height as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < MIN_HEIGHT || self.width == 0 {
            return Err(Error::InvalidArgument(format!(
                "phantom extents {}x{} too small: need height >= {MIN_HEIGHT}",
                self.height, self.width
            )));
        }
        let finite = [self.top_swing, self.ripple, self.intensity_sd, self.noise_sd]
            .iter()
            .chain(self.intensity.iter())
            .all(|v| v.is_finite() && *v >= 0.0);
        if !finite || !(self.speckle_shape > 0.0) || self.ripple >= 1.0 {
            return Err(Error::InvalidArgument("invalid phantom parameters".into()));
        }
        Ok(())
    }
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self::new(32, 120)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: Image,
    pub mask: LabelMask,
    pub boundaries: Boundaries,
}

fn normal(rng: &mut Rng, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd).expect("sd is non-negative").sample(rng)
}

/// Random sinusoid with a whole number of cycles across the width, so its
/// column mean is zero.
fn wave(rng: &mut Rng, amplitude: f64, width: usize) -> impl Fn(usize) -> f64 {
    let amp = rng.random_range(0.0..=1.0) * amplitude;
    let cycles = rng.random_range(1..=2) as f64;
    let phase = rng.random_range(0.0..TAU);
    move |x| amp * (TAU * cycles * x as f64 / width as f64 + phase).sin()
}

fn sample_boundaries(cfg: &PhantomConfig, rng: &mut Rng) -> Boundaries {
    let h = cfg.height as f64;
    let w = cfg.width;
    let top = normal(rng, cfg.top.mean * h, cfg.top.sd * h);
    let top_wave = wave(rng, cfg.top_swing * h, w);
    let bands: Vec<_> = cfg
        .thickness
        .iter()
        .map(|s| {
            let t = normal(rng, s.mean * h, s.sd * h);
            (t, wave(rng, cfg.ripple * s.mean * h, w))
        })
        .collect();
    let mut curves: [Vec<f64>; NUM_BOUNDARIES] = Default::default();
    for x in 0..w {
        let mut col = [0.0; NUM_BOUNDARIES];
        col[0] = top + top_wave(x);
        for (k, (t, ripple)) in bands.iter().enumerate() {
            col[k + 1] = col[k] + (t + ripple(x)).max(1.0);
        }
        repair_column(&mut col, 1.0, h - 1.0);
        for (c, v) in curves.iter_mut().zip(col) {
            c.push(v);
        }
    }
    Boundaries::new(curves).expect("finite boundaries")
}

/// Clean image: each pixel mixes the band intensities by the fraction of the
/// pixel's row span each band covers.
fn render(boundaries: &Boundaries, intensity: &[f64; NUM_BANDS], height: usize) -> Vec<f64> {
    let w = boundaries.width();
    let mut out = vec![0.0; height * w];
    for x in 0..w {
        let col = boundaries.column(x);
        for r in 0..height {
            let (lo, hi) = (r as f64, r as f64 + 1.0);
            let mut v = 0.0;
            for (k, &level) in intensity.iter().enumerate() {
                let top = if k == 0 { f64::NEG_INFINITY } else { col[k - 1] };
                let bottom = if k == NUM_BOUNDARIES { f64::INFINITY } else { col[k] };
                let overlap = hi.min(bottom) - lo.max(top);
                if overlap > 0.0 {
                    v += overlap * level;
                }
            }
            out[r * w + x] = v;
        }
    }
    out
}

/// One phantom, fully determined by `seed`.
pub fn gen_phantom(cfg: &PhantomConfig, seed: u64) -> Result<Phantom> {
    cfg.validate()?;
    let mut rng = rng(seed);
    let boundaries = sample_boundaries(cfg, &mut rng);
    let intensity = cfg
        .intensity
        .map(|m| normal(&mut rng, m, cfg.intensity_sd).clamp(0.0, 1.0));
    let mut pixels = render(&boundaries, &intensity, cfg.height);
    let speckle = Gamma::new(cfg.speckle_shape, 1.0 / cfg.speckle_shape)
        .map_err(|e| Error::InvalidArgument(format!("speckle: {e}")))?;
    let noise = Normal::new(0.0, cfg.noise_sd).expect("sd validated");
    for p in &mut pixels {
        *p = *p * speckle.sample(&mut rng) + noise.sample(&mut rng);
    }
    Ok(Phantom {
        image: Image::from_clamped(cfg.height, cfg.width, pixels)?,
        mask: boundaries.rasterize(cfg.height),
        boundaries,
    })
}

/// Phantom `index` of the stream rooted at `seed`.
pub fn gen_phantom_at(cfg: &PhantomConfig, seed: u64, index: usize) -> Result<Phantom> {
    gen_phantom(cfg, derive_seed(seed, index as u64))
}

/// Writes `n` phantoms (image + mask PGM pairs) into `dir` and returns their
/// manifest. File names carry `prefix` and the entry index.
pub fn gen_phantom_dataset(
    dir: &Path,
    cfg: &PhantomConfig,
    n: usize,
    seed: u64,
    split: Split,
    prefix: &str,
) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::InvalidArgument("phantom count must be >= 1".into()));
    }
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let entries = (0..n)
        .into_par_iter()
        .map(|i| {
            let entry_seed = derive_seed(seed, i as u64);
            let p = gen_phantom(cfg, entry_seed)?;
            let image = dir.join(format!("{prefix}{i:05}.pgm"));
            let mask = dir.join(format!("{prefix}{i:05}_mask.pgm"));
            save_image(&p.image, &image)?;
            save_mask(&p.mask, &mask)?;
            Ok(ManifestEntry {
                image,
                mask,
                provenance: Provenance::Real,
                seed: entry_seed,
                split,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    DatasetManifest::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = PhantomConfig::default();
        assert_eq!(gen_phantom(&cfg, 11).unwrap(), gen_phantom(&cfg, 11).unwrap());
        assert_ne!(gen_phantom(&cfg, 11).unwrap(), gen_phantom(&cfg, 12).unwrap());
    }

    #[test]
    fn too_short_rejected() {
        assert!(gen_phantom(&PhantomConfig::new(11, 40), 0).is_err());
        assert!(gen_phantom(&PhantomConfig::new(12, 40), 0).is_ok());
    }

    #[test]
    fn render_mixes_partial_rows() {
        let b = Boundaries::flat([1.5, 3.0, 4.0, 5.0, 6.0], 1).unwrap();
        let px = render(&b, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0], 8);
        assert_eq!(&px[..4], &[0.0, 0.5, 1.0, 0.0]);
    }
}
