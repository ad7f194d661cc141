//! Layer boundaries and their rasterization.
//!
//! Five boundary curves split every column into six bands, top to bottom:
//! background, RNFL, GCIPL, mid-retina, CL, background. A pixel row `r`
//! belongs to band `k` when exactly `k` boundaries lie at or above its centre
//! `r + 0.5`.

use super::image::LabelMask;
use crate::error::{Error, Result};

pub const NUM_BOUNDARIES: usize = 5;
pub const NUM_BANDS: usize = NUM_BOUNDARIES + 1;

/// Mask class of each band.
pub const BAND_CLASS: [u8; NUM_BANDS] = [0, 1, 2, 0, 3, 0];

/// Minimum distance between consecutive boundaries, in pixels.
pub const MIN_GAP: f64 = 1.0;

/// Five boundary curves, one row coordinate per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Boundaries {
    curves: [Vec<f64>; NUM_BOUNDARIES],
}

impl Boundaries {
    pub fn new(curves: [Vec<f64>; NUM_BOUNDARIES]) -> Result<Self> {
        let w = curves[0].len();
        if w == 0 || curves.iter().any(|c| c.len() != w) {
            return Err(Error::InvalidArgument(
                "boundary curves must be non-empty and of equal length".into(),
            ));
        }
        if curves.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite boundary row".into()));
        }
        Ok(Self { curves })
    }

    /// Flat boundaries at the given rows.
    pub fn flat(rows: [f64; NUM_BOUNDARIES], width: usize) -> Result<Self> {
        Self::new(rows.map(|r| vec![r; width]))
    }

    pub fn width(&self) -> usize {
        self.curves[0].len()
    }

    pub fn curve(&self, b: usize) -> &[f64] {
        &self.curves[b]
    }

    pub fn curves(&self) -> &[Vec<f64>; NUM_BOUNDARIES] {
        &self.curves
    }

    pub fn column(&self, x: usize) -> [f64; NUM_BOUNDARIES] {
        std::array::from_fn(|b| self.curves[b][x])
    }

    /// True when every column is strictly increasing with gaps of at least
    /// [`MIN_GAP`] and all rows lie in `[0, height)`.
    pub fn is_valid(&self, height: usize) -> bool {
        (0..self.width()).all(|x| {
            let col = self.column(x);
            col[0] >= 0.0
                && col[NUM_BOUNDARIES - 1] < height as f64
                && col.windows(2).all(|p| p[1] - p[0] >= MIN_GAP - 1e-9)
        })
    }

    /// Band index of every pixel, row-major.
    pub fn band_map(&self, height: usize) -> Vec<u8> {
        let w = self.width();
        let mut out = vec![0u8; height * w];
        for x in 0..w {
            let col = self.column(x);
            for r in 0..height {
                let centre = r as f64 + 0.5;
                out[r * w + x] = col.iter().filter(|&&b| centre >= b).count() as u8;
            }
        }
        out
    }

    pub fn rasterize(&self, height: usize) -> LabelMask {
        let classes = self
            .band_map(height)
            .into_iter()
            .map(|k| BAND_CLASS[k as usize])
            .collect();
        LabelMask::new(height, self.width(), classes).expect("band classes are valid")
    }
}

/// Sorts one column of boundary rows and pushes them apart so consecutive
/// rows differ by at least [`MIN_GAP`] while staying within `[lo, hi]`.
///
/// Requires `hi - lo >= 4 * MIN_GAP`.
pub fn repair_column(col: &mut [f64; NUM_BOUNDARIES], lo: f64, hi: f64) {
    debug_assert!(hi - lo >= MIN_GAP * (NUM_BOUNDARIES - 1) as f64);
    col.sort_by(f64::total_cmp);
    col[0] = col[0].max(lo);
    for k in 1..NUM_BOUNDARIES {
        col[k] = col[k].max(col[k - 1] + MIN_GAP);
    }
    col[NUM_BOUNDARIES - 1] = col[NUM_BOUNDARIES - 1].min(hi);
    for k in (0..NUM_BOUNDARIES - 1).rev() {
        col[k] = col[k].min(col[k + 1] - MIN_GAP);
    }
}

/// Integer boundary rows of a labelled mask, per column: first RNFL row,
/// first GCIPL row, one past the last GCIPL row, first CL row, one past the
/// last CL row.
///
/// Fails when a column lacks one of the three annotated classes or when the
/// classes are not stacked in anatomical order.
pub fn boundaries_from_mask(mask: &LabelMask) -> Result<Vec<[usize; NUM_BOUNDARIES]>> {
    let (h, w) = mask.extents();
    (0..w)
        .map(|x| {
            let mut first = [usize::MAX; 4];
            let mut last = [0usize; 4];
            for r in 0..h {
                let c = mask.get(r, x) as usize;
                first[c] = first[c].min(r);
                last[c] = r;
            }
            for (c, name) in [(1, "RNFL"), (2, "GCIPL"), (3, "CL")] {
                if first[c] == usize::MAX {
                    return Err(Error::Data(format!("column {x}: {name} band is empty")));
                }
            }
            let b = [first[1], first[2], last[2] + 1, first[3], last[3] + 1];
            let contiguous = (1..4).all(|c| {
                (first[c]..=last[c]).all(|r| mask.get(r, x) as usize == c)
            });
            if !contiguous || b[1] != last[1] + 1 || b[2] > b[3] {
                return Err(Error::Data(format!(
                    "column {x}: bands are not stacked RNFL, GCIPL, CL"
                )));
            }
            Ok(b)
        })
        .collect()
}
