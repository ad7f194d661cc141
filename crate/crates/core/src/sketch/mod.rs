//! Layer sketches: sampled boundaries rendered with constant band
//! intensities, optionally blurred and perturbed.

mod spline;
mod stats;

use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::data::layers::{repair_column, Boundaries, NUM_BANDS, NUM_BOUNDARIES};
use crate::data::pgm::{save_image, save_mask, write_atomic};
use crate::data::{Image, LabelMask};
use crate::error::{Error, Result};
use crate::seed::{derive_named, derive_seed, rng, Rng};

pub use spline::NaturalSpline;
pub use stats::{band_of_rows, control_columns, BoundaryStats, DEFAULT_CTRL};

/// Default blur at the 120x32 desk geometry.
pub const DEFAULT_BLUR_SIGMA: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SketchConfig {
    pub blur: bool,
    pub blur_sigma: f64,
    pub perturb: bool,
}

impl Default for SketchConfig {
    fn default() -> Self {
        Self {
            blur: true,
            blur_sigma: DEFAULT_BLUR_SIGMA,
            perturb: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sketch {
    pub image: Image,
    pub mask: LabelMask,
    pub boundaries: Boundaries,
    /// Index into [`BoundaryStats::sources`] of the intensity source image.
    pub source: usize,
}

/// Raw per-control-column draws `N(μ_b, σ_b²)`, before any repair.
pub fn draw_control_rows(stats: &BoundaryStats, rng: &mut Rng) -> Vec<[f64; NUM_BOUNDARIES]> {
    stats
        .row_mean
        .iter()
        .zip(&stats.row_sd)
        .map(|(mu, sd)| {
            std::array::from_fn(|b| {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                mu[b] + sd[b] * z
            })
        })
        .collect()
}

/// Turns raw control draws into boundary curves of the given width: repair
/// each control column, spline across columns, then repair every column.
pub fn boundaries_from_draws(
    stats: &BoundaryStats,
    draws: &[[f64; NUM_BOUNDARIES]],
    width: usize,
) -> Result<Boundaries> {
    let n = stats.n_ctrl();
    if width < n || draws.len() != n {
        return Err(Error::InvalidArgument(format!(
            "width {width} must be >= n_ctrl {n} with one draw per control column"
        )));
    }
    let (lo, hi) = (1.0, stats.height as f64 - 1.0);
    let scale = (width - 1) as f64 / (stats.width - 1).max(1) as f64;
    let xs: Vec<f64> = stats.ctrl_cols.iter().map(|&c| c as f64 * scale).collect();
    let mut ctrl = draws.to_vec();
    for col in &mut ctrl {
        repair_column(col, lo, hi);
    }
    let splines = (0..NUM_BOUNDARIES)
        .map(|b| NaturalSpline::new(&xs, &ctrl.iter().map(|c| c[b]).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let mut curves: [Vec<f64>; NUM_BOUNDARIES] = Default::default();
    for x in 0..width {
        let mut col: [f64; NUM_BOUNDARIES] = std::array::from_fn(|b| splines[b].eval(x as f64));
        repair_column(&mut col, lo, hi);
        for (c, v) in curves.iter_mut().zip(col) {
            c.push(v);
        }
    }
    Boundaries::new(curves)
}

pub fn sample_boundaries(stats: &BoundaryStats, width: usize, seed: u64) -> Result<Boundaries> {
    let draws = draw_control_rows(stats, &mut rng(seed));
    boundaries_from_draws(stats, &draws, width)
}

/// Fills every band with the band mean of one seed-selected source image.
pub fn rasterize_sketch(boundaries: &Boundaries, stats: &BoundaryStats, seed: u64) -> Result<Sketch> {
    if !boundaries.is_valid(stats.height) {
        return Err(Error::InvalidArgument("sketch boundaries cross or leave the image".into()));
    }
    let source = rng(seed).random_range(0..stats.image_band_means.len());
    let levels = &stats.image_band_means[source];
    let bands = boundaries.band_map(stats.height);
    let pixels = bands.iter().map(|&k| levels[k as usize]).collect();
    Ok(Sketch {
        image: Image::from_clamped(stats.height, boundaries.width(), pixels)?,
        mask: boundaries.rasterize(stats.height),
        boundaries: boundaries.clone(),
        source,
    })
}

/// Normalized Gaussian taps for offsets `-r..=r`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Half-sample symmetric index: `-1 → 0`, `-2 → 1`, `n → n - 1`, ...
fn reflect(i: isize, n: isize) -> usize {
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn convolve_1d(src: &[f64], dst: &mut [f64], kernel: &[f64], len: usize, stride: usize) {
    let r = (kernel.len() / 2) as isize;
    for i in 0..len as isize {
        let mut acc = 0.0;
        for (j, &k) in kernel.iter().enumerate() {
            acc += k * src[reflect(i + j as isize - r, len as isize) * stride];
        }
        dst[i as usize * stride] = acc;
    }
}

/// Separable Gaussian blur. `sigma = 0` is the identity.
///
/// Borders use half-sample symmetric extension: the first sample past the
/// edge replicates the edge pixel, further ones mirror inward. Unlike pure
/// replication this makes the blur matrix symmetric, so the global mean is
/// preserved exactly.
pub fn blur_sketch(image: &Image, sigma: f64) -> Result<Image> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("blur sigma {sigma} must be >= 0")));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let (h, w) = image.extents();
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        convolve_1d(image.row(r), &mut tmp[r * w..(r + 1) * w], &kernel, w, 1);
    }
    let mut out = vec![0.0; h * w];
    for c in 0..w {
        convolve_1d(&tmp[c..], &mut out[c..], &kernel, h, w);
    }
    Image::from_clamped(h, w, out)
}

/// Band index of every pixel of a (possibly imperfect) mask: annotated
/// classes map to their bands; background splits into above the first
/// annotated pixel, below the last CL pixel, and in between.
pub fn bands_from_mask(mask: &LabelMask) -> Vec<u8> {
    let (h, w) = mask.extents();
    let mut out = vec![0u8; h * w];
    for x in 0..w {
        let col: Vec<u8> = (0..h).map(|r| mask.get(r, x)).collect();
        let first = col.iter().position(|&c| c != 0).unwrap_or(h);
        let last_cl = col.iter().rposition(|&c| c == 3);
        for (r, &c) in col.iter().enumerate() {
            out[r * w + x] = match c {
                1 => 1,
                2 => 2,
                3 => 4,
                _ if r < first => 0,
                _ if last_cl.is_some_and(|l| r > l) => 5,
                _ => 3,
            };
        }
    }
    out
}

/// Additive Gaussian noise with each band's fitted intensity spread,
/// clamped to `[0, 1]`.
pub fn perturb_sketch(image: &Image, mask: &LabelMask, stats: &BoundaryStats, seed: u64) -> Result<Image> {
    let noise = perturbation(mask, &stats.band_sd, seed)?;
    if image.extents() != mask.extents() {
        return Err(Error::shape("perturb_sketch", &[image.height(), image.width()], &[mask.height(), mask.width()]));
    }
    let px = image.pixels().iter().zip(noise).map(|(p, n)| p + n).collect();
    Image::from_clamped(image.height(), image.width(), px)
}

/// The noise field [`perturb_sketch`] adds, before clamping.
pub fn perturbation(mask: &LabelMask, band_sd: &[f64; NUM_BANDS], seed: u64) -> Result<Vec<f64>> {
    let mut rng = rng(seed);
    bands_from_mask(mask)
        .into_iter()
        .map(|k| {
            let sd = band_sd[k as usize];
            Normal::new(0.0, sd)
                .map(|d| d.sample(&mut rng))
                .map_err(|_| Error::InvalidArgument(format!("band {k} sd {sd}")))
        })
        .collect()
}

/// The full pipeline for one sketch: sample, rasterize, blur, perturb.
/// Each stage draws from its own stream derived from `seed`.
pub fn generate_sketch(stats: &BoundaryStats, cfg: &SketchConfig, width: usize, seed: u64) -> Result<Sketch> {
    let b = sample_boundaries(stats, width, derive_named(seed, "boundaries"))?;
    let mut sketch = rasterize_sketch(&b, stats, derive_named(seed, "source"))?;
    if cfg.blur {
        sketch.image = blur_sketch(&sketch.image, cfg.blur_sigma)?;
    }
    if cfg.perturb {
        sketch.image = perturb_sketch(&sketch.image, &sketch.mask, stats, derive_named(seed, "perturb"))?;
    }
    Ok(sketch)
}

/// Sketch `index` of the stream rooted at `seed`.
pub fn generate_sketch_at(stats: &BoundaryStats, cfg: &SketchConfig, width: usize, seed: u64, index: usize) -> Result<Sketch> {
    generate_sketch(stats, cfg, width, derive_seed(seed, index as u64))
}

/// Paths of a persisted sketch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SketchFiles {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub sidecar: PathBuf,
}

impl SketchFiles {
    pub fn new(dir: &Path, stem: &str) -> Self {
        Self {
            image: dir.join(format!("{stem}.pgm")),
            mask: dir.join(format!("{stem}_mask.pgm")),
            sidecar: dir.join(format!("{stem}.txt")),
        }
    }
}

/// Writes image, mask and a `key=value` sidecar with seed, blur settings and
/// the intensity source reference.
pub fn save_sketch(sketch: &Sketch, stats: &BoundaryStats, cfg: &SketchConfig, seed: u64, files: &SketchFiles) -> Result<()> {
    save_image(&sketch.image, &files.image)?;
    save_mask(&sketch.mask, &files.mask)?;
    let sigma = if cfg.blur { cfg.blur_sigma } else { 0.0 };
    let side = format!(
        "seed={seed}\nsigma={sigma}\nperturb={}\nsource={}\n",
        cfg.perturb, stats.sources[sketch.source]
    );
    write_atomic(&files.sidecar, side.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats_from(rows: [f64; 5], sd: f64) -> BoundaryStats {
        BoundaryStats {
            height: 32,
            width: 40,
            ctrl_cols: control_columns(40, 8),
            row_mean: vec![rows; 8],
            row_sd: vec![[sd; 5]; 8],
            band_mean: [0.05, 0.7, 0.45, 0.3, 0.6, 0.1],
            band_sd: [0.0; 6],
            image_band_means: vec![[0.1, 0.8, 0.5, 0.3, 0.6, 0.2], [0.0, 0.6, 0.4, 0.2, 0.5, 0.0]],
            sources: vec!["a".into(), "b".into()],
        }
    }

    #[test]
    fn zero_spread_reproduces_means() {
        let rows = [5.0, 9.5, 13.0, 17.25, 22.0];
        let b = sample_boundaries(&stats_from(rows, 0.0), 40, 1).unwrap();
        for x in 0..40 {
            assert_eq!(b.column(x), rows);
        }
    }

    #[test]
    fn sketch_bands_use_source_means() {
        let stats = stats_from([5.0, 9.0, 13.0, 17.0, 22.0], 0.0);
        let b = sample_boundaries(&stats, 40, 1).unwrap();
        let s = rasterize_sketch(&b, &stats, 3).unwrap();
        let levels = stats.image_band_means[s.source];
        for (r, expect) in [(2, 0), (7, 1), (10, 2), (15, 3), (20, 4), (30, 5)] {
            assert!((s.image.get(r, 0) - levels[expect]).abs() < 1e-6);
        }
        assert_eq!(s.mask.histogram(), [(5 + 4 + 10) * 40, 4 * 40, 4 * 40, 5 * 40]);
    }

    #[test]
    fn blur_identity_and_constant() {
        let img = Image::new(3, 3, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 0.1, 0.3, 0.5]).unwrap();
        assert_eq!(blur_sketch(&img, 0.0).unwrap(), img);
        let c = Image::filled(10, 12, 0.37).unwrap();
        let out = blur_sketch(&c, 1.7).unwrap();
        assert!(out.pixels().iter().all(|&v| (v - 0.37).abs() < 1e-12));
        assert_eq!(gaussian_kernel(2.0).len(), 13);
    }

    #[test]
    fn reflection_indices() {
        let got: Vec<usize> = (-4..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, [3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
        assert_eq!(reflect(-9, 4), 0);
    }

    #[test]
    fn zero_sd_perturbation_is_identity() {
        let stats = stats_from([5.0, 9.0, 13.0, 17.0, 22.0], 0.0);
        let s = generate_sketch(&stats, &SketchConfig { blur: false, ..Default::default() }, 40, 9).unwrap();
        let again = perturb_sketch(&s.image, &s.mask, &stats, 4).unwrap();
        assert_eq!(again, s.image);
    }

    #[test]
    fn bands_from_mask_matches_rasterization() {
        let b = Boundaries::flat([3.0, 6.0, 8.0, 11.0, 15.0], 4).unwrap();
        assert_eq!(bands_from_mask(&b.rasterize(20)), b.band_map(20));
    }
}
