//! Binary PGM (P5, maxval 255) I/O.
//!
//! Images are quantized to `round(255 x)`; masks store their raw class
//! indices as bytes.

use std::io::Write;
use std::path::Path;

use super::image::{Image, LabelMask};
use crate::error::{Error, Result};

const WHAT: &str = "PGM";

fn format_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        what: WHAT,
        offset,
        reason: reason.into(),
    }
}

struct Header {
    width: usize,
    height: usize,
    data_offset: usize,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    /// Skips whitespace and `#` comments that run to end of line.
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, field: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(match self.bytes.get(self.pos) {
                None => format_err(start, format!("header truncated before {field}")),
                Some(b) => format_err(start, format!("expected {field}, found byte 0x{b:02x}")),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(start, format!("{field} out of range")))
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(format_err(0, "file too short for magic number"));
    }
    if &bytes[..2] != b"P5" {
        return Err(format_err(0, "magic number is not P5"));
    }
    let mut cur = Cursor { bytes, pos: 2 };
    if !cur.bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(format_err(2, "expected whitespace after magic number"));
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = {
        cur.skip_space();
        cur.pos
    };
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(format_err(2, format!("zero extent {width}x{height}")));
    }
    if maxval != 255 {
        return Err(format_err(maxval_at, format!("maxval {maxval} is not 255")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        Some(_) => return Err(format_err(cur.pos, "expected single whitespace before raster")),
        None => return Err(format_err(cur.pos, "header truncated before raster")),
    }
    let data_offset = cur.pos + 1;
    let need = width
        .checked_mul(height)
        .ok_or_else(|| format_err(2, "extents overflow"))?;
    let have = bytes.len() - data_offset;
    if have < need {
        return Err(format_err(
            bytes.len(),
            format!("raster truncated: {have} of {need} bytes"),
        ));
    }
    if have > need {
        return Err(format_err(
            data_offset + need,
            format!("{} trailing bytes after raster", have - need),
        ));
    }
    Ok(Header {
        width,
        height,
        data_offset,
    })
}

/// Parses a P5 byte buffer into `(height, width, raster)`.
pub fn decode(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let h = parse_header(bytes)?;
    Ok((h.height, h.width, bytes[h.data_offset..].to_vec()))
}

pub fn encode(height: usize, width: usize, raster: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(raster);
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn annotate(path: &Path, err: Error) -> Error {
    match err {
        Error::Format { offset, reason, .. } => Error::Data(format!(
            "{}: malformed {WHAT} at byte {offset}: {reason}",
            path.display()
        )),
        e => e,
    }
}

/// Writes `bytes` to `path` via a temporary sibling and a rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp~");
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn quantize(p: f64) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn image_from_pgm(bytes: &[u8]) -> Result<Image> {
    let (h, w, raster) = decode(bytes)?;
    Image::new(h, w, raster.iter().map(|&b| b as f64 / 255.0).collect())
}

pub fn mask_from_pgm(bytes: &[u8]) -> Result<LabelMask> {
    let (h, w, raster) = decode(bytes)?;
    LabelMask::new(h, w, raster)
}

pub fn load_image(path: &Path) -> Result<Image> {
    image_from_pgm(&read(path)?).map_err(|e| annotate(path, e))
}

pub fn save_image(image: &Image, path: &Path) -> Result<()> {
    let raster: Vec<u8> = image.pixels().iter().map(|&p| quantize(p)).collect();
    write_atomic(path, &encode(image.height(), image.width(), &raster))
}

pub fn load_mask(path: &Path) -> Result<LabelMask> {
    mask_from_pgm(&read(path)?).map_err(|e| annotate(path, e))
}

pub fn save_mask(mask: &LabelMask, path: &Path) -> Result<()> {
    write_atomic(path, &encode(mask.height(), mask.width(), mask.classes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn offset(err: Error) -> usize {
        match err {
            Error::Format { offset, .. } => offset,
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn random_image_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let mut rng = crate::seed::rng(3);
        let px: Vec<f64> = (0..12 * 7).map(|_| rng.random::<f64>()).collect();
        let img = Image::new(12, 7, px).unwrap();
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.extents(), (12, 7));
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn zeros_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.pgm");
        let img = Image::filled(4, 5, 0.0).unwrap();
        save_image(&img, &path).unwrap();
        assert_eq!(load_image(&path).unwrap(), img);
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let mask = LabelMask::new(2, 3, vec![0, 1, 2, 3, 0, 1]).unwrap();
        save_mask(&mask, &path).unwrap();
        assert_eq!(load_mask(&path).unwrap(), mask);
    }

    #[test]
    fn rejects_maxval_other_than_255() {
        let bytes = b"P5\n2 1\n65535\n\0\0\0\0";
        assert_eq!(offset(image_from_pgm(bytes).unwrap_err()), 7);
        let bytes = b"P5\n2 1\n15\n\0\0";
        assert!(image_from_pgm(bytes).is_err());
    }

    #[test]
    fn reports_offsets() {
        assert_eq!(offset(decode(b"P6\n1 1\n255\n\0").unwrap_err()), 0);
        assert_eq!(offset(decode(b"P5\n2 x\n255\n\0").unwrap_err()), 5);
        // Raster one byte short: reported at end of file.
        assert_eq!(offset(decode(b"P5\n2 2\n255\n\0\0\0").unwrap_err()), 14);
        assert_eq!(offset(decode(b"P5\n1 1\n255\n\0\0").unwrap_err()), 12);
        assert!(decode(b"P5\n2 2\n255").is_err());
    }

    #[test]
    fn accepts_comments() {
        let (h, w, r) = decode(b"P5 # made by hand\n3 # width\n1\n255\n\x01\x02\x03").unwrap();
        assert_eq!((h, w, r), (1, 3, vec![1, 2, 3]));
    }

    #[test]
    fn mask_with_bad_class_rejected() {
        assert!(mask_from_pgm(&encode(1, 2, &[0, 9])).is_err());
    }
}
