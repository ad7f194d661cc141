//! Region-of-interest cropping and block downsampling.

use super::image::{check_pair, Image, LabelMask, NUM_CLASSES};
use crate::error::{Error, Result};

/// First row of a `crop_rows`-tall window centred on row index `center`,
/// clamped so the window stays inside `0..height`.
fn window_start(center: f64, crop_rows: usize, height: usize) -> usize {
    let start = (center - crop_rows as f64 / 2.0).round();
    start.clamp(0.0, (height - crop_rows) as f64) as usize
}

fn check_rows(crop_rows: usize, height: usize) -> Result<()> {
    if crop_rows == 0 || crop_rows > height {
        return Err(Error::InvalidArgument(format!(
            "crop of {crop_rows} rows from an image of height {height}"
        )));
    }
    Ok(())
}

/// Crops a full-width window of `crop_rows` rows centred on the mean row of
/// the mask's foreground pixels.
pub fn crop_roi(image: &Image, mask: &LabelMask, crop_rows: usize) -> Result<(Image, LabelMask)> {
    check_pair(image, mask, "crop_roi")?;
    check_rows(crop_rows, image.height())?;
    let (mut sum, mut count) = (0.0, 0usize);
    for (i, &c) in mask.classes().iter().enumerate() {
        if c != 0 {
            sum += (i / mask.width()) as f64;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Data(
            "crop_roi: mask has no foreground pixels".into(),
        ));
    }
    let start = window_start(sum / count as f64, crop_rows, image.height());
    Ok((image.rows(start, crop_rows), mask.rows(start, crop_rows)))
}

/// Crop for unlabelled images: the window is centred on the
/// intensity-weighted mean row.
pub fn crop_roi_unlabeled(image: &Image, crop_rows: usize) -> Result<Image> {
    check_rows(crop_rows, image.height())?;
    let (mut sum, mut total) = (0.0, 0.0);
    for r in 0..image.height() {
        let mass: f64 = image.row(r).iter().sum();
        sum += mass * r as f64;
        total += mass;
    }
    let center = if total > 0.0 {
        sum / total
    } else {
        (image.height() as f64 - 1.0) / 2.0
    };
    Ok(image.rows(window_start(center, crop_rows, image.height()), crop_rows))
}

fn check_factors(height: usize, width: usize, fy: usize, fx: usize) -> Result<()> {
    if fy == 0 || fx == 0 || height % fy != 0 || width % fx != 0 {
        return Err(Error::InvalidArgument(format!(
            "extents {height}x{width} not divisible by factors {fy}x{fx}"
        )));
    }
    Ok(())
}

/// Non-overlapping `fy x fx` box mean.
pub fn downsample(image: &Image, fy: usize, fx: usize) -> Result<Image> {
    let (h, w) = image.extents();
    check_factors(h, w, fy, fx)?;
    let (oh, ow) = (h / fy, w / fx);
    let scale = 1.0 / (fy * fx) as f64;
    let mut out = vec![0.0; oh * ow];
    for r in 0..h {
        let row = image.row(r);
        let dst = &mut out[(r / fy) * ow..(r / fy + 1) * ow];
        for (c, &v) in row.iter().enumerate() {
            dst[c / fx] += v;
        }
    }
    for v in &mut out {
        *v *= scale;
    }
    Image::from_clamped(oh, ow, out)
}

/// Per-block majority vote; ties go to the smallest class index.
pub fn downsample_mask(mask: &LabelMask, fy: usize, fx: usize) -> Result<LabelMask> {
    let (h, w) = mask.extents();
    check_factors(h, w, fy, fx)?;
    let (oh, ow) = (h / fy, w / fx);
    let mut counts = vec![[0usize; NUM_CLASSES]; oh * ow];
    for r in 0..h {
        for c in 0..w {
            counts[(r / fy) * ow + c / fx][mask.get(r, c) as usize] += 1;
        }
    }
    let classes = counts
        .iter()
        .map(|n| {
            let mut best = 0;
            for k in 1..NUM_CLASSES {
                if n[k] > n[best] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    LabelMask::new(oh, ow, classes)
}
