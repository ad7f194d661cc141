//! Boundary-row and band-intensity statistics fitted from labelled masks.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::layers::{boundaries_from_mask, NUM_BANDS, NUM_BOUNDARIES};
use crate::data::pgm::write_atomic;
use crate::data::{DatasetManifest, Image, LabelMask};
use crate::error::{Error, Result};

/// Default number of control columns.
pub const DEFAULT_CTRL: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryStats {
    pub height: usize,
    pub width: usize,
    /// Control column positions at the fitted width.
    pub ctrl_cols: Vec<usize>,
    /// Per control column: mean row of each boundary.
    pub row_mean: Vec<[f64; NUM_BOUNDARIES]>,
    /// Per control column: sample standard deviation of each boundary row.
    pub row_sd: Vec<[f64; NUM_BOUNDARIES]>,
    /// Pooled pixel intensity mean and standard deviation of each band.
    pub band_mean: [f64; NUM_BANDS],
    pub band_sd: [f64; NUM_BANDS],
    /// Band means of every source image; empty bands take the pooled mean.
    pub image_band_means: Vec<[f64; NUM_BANDS]>,
    /// Reference of each source image.
    pub sources: Vec<String>,
}

/// `n` evenly spaced columns in `0..width`, including both ends.
pub fn control_columns(width: usize, n: usize) -> Vec<usize> {
    (0..n)
        .map(|j| ((j * (width - 1)) as f64 / (n - 1) as f64).round() as usize)
        .collect()
}

fn mean_sd(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (n, sum) = xs.clone().fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    let mean = sum / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Band index of every pixel given per-column integer boundary rows.
pub fn band_of_rows(rows: &[[usize; NUM_BOUNDARIES]], height: usize) -> Vec<u8> {
    let w = rows.len();
    let mut out = vec![0u8; height * w];
    for (x, b) in rows.iter().enumerate() {
        for r in 0..height {
            out[r * w + x] = b.iter().filter(|&&v| r >= v).count() as u8;
        }
    }
    out
}

impl BoundaryStats {
    /// Fits statistics from in-memory pairs. `sources` names each pair in
    /// error messages and in sketch provenance.
    pub fn fit(pairs: &[(Image, LabelMask)], sources: &[String], n_ctrl: usize) -> Result<Self> {
        let Some((first, _)) = pairs.first() else {
            return Err(Error::InvalidArgument("no images to fit statistics from".into()));
        };
        let (height, width) = first.extents();
        if n_ctrl < 2 || n_ctrl > width {
            return Err(Error::InvalidArgument(format!(
                "n_ctrl = {n_ctrl} must lie in 2..={width}"
            )));
        }
        if sources.len() != pairs.len() {
            return Err(Error::InvalidArgument("one source name per pair required".into()));
        }
        let ctrl_cols = control_columns(width, n_ctrl);
        let mut rows = Vec::with_capacity(pairs.len());
        let mut pooled = vec![Vec::new(); NUM_BANDS];
        let mut per_image = Vec::with_capacity(pairs.len());
        for ((image, mask), name) in pairs.iter().zip(sources) {
            if image.extents() != (height, width) || mask.extents() != (height, width) {
                return Err(Error::Data(format!(
                    "{name}: extents {:?} differ from {:?}",
                    mask.extents(),
                    (height, width)
                )));
            }
            let b = boundaries_from_mask(mask).map_err(|e| Error::Data(format!("{name}: {e}")))?;
            let bands = band_of_rows(&b, height);
            let mut sums = [(0.0, 0usize); NUM_BANDS];
            for (&k, &p) in bands.iter().zip(image.pixels()) {
                pooled[k as usize].push(p);
                sums[k as usize].0 += p;
                sums[k as usize].1 += 1;
            }
            per_image.push(sums);
            rows.push(b);
        }
        let mut band_mean = [0.0; NUM_BANDS];
        let mut band_sd = [0.0; NUM_BANDS];
        for k in 0..NUM_BANDS {
            if pooled[k].is_empty() {
                return Err(Error::Data(format!("band {k} is empty in every image")));
            }
            (band_mean[k], band_sd[k]) = mean_sd(pooled[k].iter().copied());
        }
        let image_band_means = per_image
            .iter()
            .map(|sums| {
                std::array::from_fn(|k| match sums[k] {
                    (_, 0) => band_mean[k],
                    (s, n) => s / n as f64,
                })
            })
            .collect();
        let mut row_mean = Vec::with_capacity(n_ctrl);
        let mut row_sd = Vec::with_capacity(n_ctrl);
        for &c in &ctrl_cols {
            let mut m = [0.0; NUM_BOUNDARIES];
            let mut s = [0.0; NUM_BOUNDARIES];
            for b in 0..NUM_BOUNDARIES {
                (m[b], s[b]) = mean_sd(rows.iter().map(|r| r[c][b] as f64));
            }
            row_mean.push(m);
            row_sd.push(s);
        }
        Ok(Self {
            height,
            width,
            ctrl_cols,
            row_mean,
            row_sd,
            band_mean,
            band_sd,
            image_band_means,
            sources: sources.to_vec(),
        })
    }

    /// Fits from every entry of a manifest.
    pub fn fit_manifest(manifest: &DatasetManifest, n_ctrl: usize) -> Result<Self> {
        let pairs = manifest.load_pairs()?;
        let names: Vec<String> = manifest
            .entries()
            .iter()
            .map(|e| e.image.display().to_string())
            .collect();
        Self::fit(&pairs, &names, n_ctrl)
    }

    pub fn n_ctrl(&self) -> usize {
        self.ctrl_cols.len()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join("\t");
        writeln!(s, "height\t{}", self.height).unwrap();
        writeln!(s, "width\t{}", self.width).unwrap();
        writeln!(s, "band_mean\t{}", join(&self.band_mean)).unwrap();
        writeln!(s, "band_sd\t{}", join(&self.band_sd)).unwrap();
        for (j, &c) in self.ctrl_cols.iter().enumerate() {
            writeln!(s, "ctrl\t{c}\t{}\t{}", join(&self.row_mean[j]), join(&self.row_sd[j])).unwrap();
        }
        for (m, src) in self.image_band_means.iter().zip(&self.sources) {
            writeln!(s, "source\t{}\t{src}", join(m)).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut height = None;
        let mut width = None;
        let mut band_mean = None;
        let mut band_sd = None;
        let (mut ctrl_cols, mut row_mean, mut row_sd) = (Vec::new(), Vec::new(), Vec::new());
        let (mut image_band_means, mut sources) = (Vec::new(), Vec::new());
        for (i, line) in text.lines().enumerate() {
            let bad = |why: &str| Error::Data(format!("stats line {}: {why}", i + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            let floats = |fs: &[&str]| -> Result<Vec<f64>> {
                fs.iter()
                    .map(|f| f.parse::<f64>().map_err(|_| bad(&format!("`{f}` is not a number"))))
                    .collect()
            };
            let array = |v: Vec<f64>| -> Result<[f64; NUM_BANDS]> {
                v.try_into().map_err(|_| bad("wrong number of band values"))
            };
            match fields[0] {
                "" => continue,
                "height" | "width" => {
                    let v: usize = fields
                        .get(1)
                        .and_then(|f| f.parse().ok())
                        .ok_or_else(|| bad("expected an integer"))?;
                    if fields[0] == "height" { height = Some(v) } else { width = Some(v) }
                }
                "band_mean" => band_mean = Some(array(floats(&fields[1..])?)?),
                "band_sd" => band_sd = Some(array(floats(&fields[1..])?)?),
                "ctrl" if fields.len() == 2 + 2 * NUM_BOUNDARIES => {
                    ctrl_cols.push(fields[1].parse().map_err(|_| bad("bad column"))?);
                    let v = floats(&fields[2..])?;
                    row_mean.push(v[..NUM_BOUNDARIES].try_into().unwrap());
                    row_sd.push(v[NUM_BOUNDARIES..].try_into().unwrap());
                }
                "source" if fields.len() == 2 + NUM_BANDS => {
                    image_band_means.push(array(floats(&fields[1..1 + NUM_BANDS])?)?);
                    sources.push(fields[1 + NUM_BANDS].to_string());
                }
                other => return Err(bad(&format!("unexpected record `{other}`"))),
            }
        }
        let missing = |what: &str| Error::Data(format!("stats file lacks `{what}`"));
        let stats = Self {
            height: height.ok_or_else(|| missing("height"))?,
            width: width.ok_or_else(|| missing("width"))?,
            ctrl_cols,
            row_mean,
            row_sd,
            band_mean: band_mean.ok_or_else(|| missing("band_mean"))?,
            band_sd: band_sd.ok_or_else(|| missing("band_sd"))?,
            image_band_means,
            sources,
        };
        if stats.n_ctrl() < 2 || stats.image_band_means.is_empty() {
            return Err(Error::Data("stats file needs >= 2 ctrl rows and >= 1 source".into()));
        }
        Ok(stats)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Boundaries;

    fn flat_pair(rows: [f64; 5], h: usize, w: usize) -> (Image, LabelMask) {
        let mask = Boundaries::flat(rows, w).unwrap().rasterize(h);
        let px = mask.classes().iter().map(|&c| c as f64 / 4.0).collect();
        (Image::new(h, w, px).unwrap(), mask)
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("img{i}")).collect()
    }

    #[test]
    fn identical_masks_give_zero_spread() {
        let p = flat_pair([3.0, 6.0, 8.0, 11.0, 15.0], 20, 10);
        let s = BoundaryStats::fit(&[p.clone(), p], &names(2), 4).unwrap();
        assert_eq!(s.ctrl_cols, vec![0, 3, 6, 9]);
        for j in 0..4 {
            assert_eq!(s.row_mean[j], [3.0, 6.0, 8.0, 11.0, 15.0]);
            assert_eq!(s.row_sd[j], [0.0; 5]);
        }
        assert_eq!(s.band_sd, [0.0; 6]);
        assert_eq!(s.band_mean, [0.0, 0.25, 0.5, 0.0, 0.75, 0.0]);
    }

    #[test]
    fn two_point_statistics() {
        let a = flat_pair([2.0, 10.0, 16.0, 18.0, 22.0], 30, 8);
        let b = flat_pair([2.0, 14.0, 16.0, 18.0, 22.0], 30, 8);
        let s = BoundaryStats::fit(&[a, b], &names(2), 2).unwrap();
        let sd = ((4.0f64 + 4.0) / 1.0).sqrt();
        assert_eq!(s.row_mean[0][1], 12.0);
        assert!((s.row_sd[1][1] - sd).abs() < 1e-12);
    }

    #[test]
    fn empty_band_names_image_and_column() {
        let (img, _) = flat_pair([3.0, 6.0, 8.0, 11.0, 15.0], 20, 10);
        let mut classes = Boundaries::flat([3.0, 6.0, 8.0, 11.0, 15.0], 10).unwrap().rasterize(20).classes().to_vec();
        for r in 6..8 {
            classes[r * 10 + 7] = 0;
        }
        let mask = LabelMask::new(20, 10, classes).unwrap();
        let err = BoundaryStats::fit(&[(img, mask)], &names(1), 2).unwrap_err().to_string();
        assert!(err.contains("img0") && err.contains("column 7"), "{err}");
    }

    #[test]
    fn text_round_trip() {
        let a = flat_pair([2.0, 10.0, 16.0, 18.0, 22.0], 30, 8);
        let b = flat_pair([2.5, 14.0, 16.0, 18.0, 22.0], 30, 8);
        let s = BoundaryStats::fit(&[a, b], &names(2), 3).unwrap();
        assert_eq!(BoundaryStats::from_text(&s.to_text()).unwrap(), s);
        assert!(BoundaryStats::from_text("height\t3\nbogus\t1\n").is_err());
    }
}
