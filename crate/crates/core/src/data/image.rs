use crate::error::{Error, Result};

/// Number of mask classes: background, RNFL, GCIPL, CL.
pub const NUM_CLASSES: usize = 4;

/// Grayscale image in the storage domain `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::shape("Image::new", &[height, width], &[pixels.len()]));
        }
        if let Some(i) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument(format!(
                "pixel {i} = {} outside [0, 1]",
                pixels[i]
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    /// Builds an image, clamping every value into `[0, 1]`. Non-finite
    /// values are still rejected.
    pub fn from_clamped(height: usize, width: usize, mut pixels: Vec<f64>) -> Result<Self> {
        if let Some(i) = pixels.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(format!("pixel {i} is not finite")));
        }
        for p in &mut pixels {
            *p = p.clamp(0.0, 1.0);
        }
        Self::new(height, width, pixels)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn extents(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.pixels[row * self.width..(row + 1) * self.width]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Rows `start..start + rows`, full width.
    pub fn rows(&self, start: usize, rows: usize) -> Image {
        Image {
            height: rows,
            width: self.width,
            pixels: self.pixels[start * self.width..(start + rows) * self.width].to_vec(),
        }
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut pixels = self.pixels.clone();
        for r in pixels.chunks_mut(self.width) {
            r.reverse();
        }
        Image { pixels, ..*self }
    }

    /// Diffusion-domain values `2x - 1`.
    pub fn to_signed(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| 2.0 * p - 1.0).collect()
    }

    /// Inverse of [`Image::to_signed`], clamping to `[-1, 1]` first.
    pub fn from_signed(height: usize, width: usize, values: &[f64]) -> Result<Image> {
        let pixels = values
            .iter()
            .map(|&v| (v.clamp(-1.0, 1.0) + 1.0) / 2.0)
            .collect();
        Image::from_clamped(height, width, pixels)
    }
}

/// Per-pixel class indices in `0..NUM_CLASSES`, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMask {
    height: usize,
    width: usize,
    classes: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, classes: Vec<u8>) -> Result<Self> {
        if classes.len() != height * width {
            return Err(Error::shape(
                "LabelMask::new",
                &[height, width],
                &[classes.len()],
            ));
        }
        if let Some(i) = classes.iter().position(|&c| c as usize >= NUM_CLASSES) {
            return Err(Error::InvalidArgument(format!(
                "class {} at pixel {i} outside 0..{NUM_CLASSES}",
                classes[i]
            )));
        }
        Ok(Self {
            height,
            width,
            classes,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn extents(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.classes[row * self.width + col]
    }

    pub fn rows(&self, start: usize, rows: usize) -> LabelMask {
        LabelMask {
            height: rows,
            width: self.width,
            classes: self.classes[start * self.width..(start + rows) * self.width].to_vec(),
        }
    }

    pub fn flip_horizontal(&self) -> LabelMask {
        let mut classes = self.classes.clone();
        for r in classes.chunks_mut(self.width) {
            r.reverse();
        }
        LabelMask { classes, ..*self }
    }

    /// Pixel count per class.
    pub fn histogram(&self) -> [usize; NUM_CLASSES] {
        let mut h = [0; NUM_CLASSES];
        for &c in &self.classes {
            h[c as usize] += 1;
        }
        h
    }
}

pub(crate) fn check_pair(image: &Image, mask: &LabelMask, op: &'static str) -> Result<()> {
    if image.extents() != mask.extents() {
        return Err(Error::shape(
            op,
            &[image.height, image.width],
            &[mask.height, mask.width],
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range() {
        assert!(Image::new(1, 2, vec![0.0, 1.5]).is_err());
        assert!(Image::new(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(LabelMask::new(1, 2, vec![0, 4]).is_err());
        assert!(Image::from_clamped(1, 2, vec![-0.5, 1.5]).is_ok());
    }

    #[test]
    fn signed_round_trip() {
        let img = Image::new(1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(img.to_signed(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(Image::from_signed(1, 3, &img.to_signed()).unwrap(), img);
    }
}
