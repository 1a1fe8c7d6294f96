//! Binary PPM (P6) / PGM (P5) image IO.
//!
//! Images are stored in memory as `f64` channels in `[0,1]` and quantized to
//! 8-bit on write with round-half-up (`(v·255).round()`). Reading maps bytes
//! back through `b/255`, so write→read→write is byte-idempotent — the property
//! the dataset determinism checks rely on.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImgError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("bad image file {path}: {detail}")]
    Format { path: String, detail: String },
}

fn io_err(path: &Path, source: io::Error) -> ImgError {
    ImgError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, detail: impl Into<String>) -> ImgError {
    ImgError::Format {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

/// RGB image, row-major, channels interleaved, values in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    /// Constant-color image.
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Image::new(width, height);
        for p in 0..width * height {
            img.data[3 * p..3 * p + 3].copy_from_slice(&rgb);
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Flat channel view (len = w·h·3), row-major, RGB interleaved.
    pub fn channels(&self) -> &[f64] {
        &self.data
    }

    /// Serializes to P6 bytes (maxval 255).
    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        write!(header, "P6\n{} {}\n255\n", self.width, self.height).unwrap();
        let mut bytes = header.into_bytes();
        bytes.extend(self.data.iter().map(|&v| quantize(v)));
        bytes
    }

    pub fn write_ppm(&self, path: &Path) -> Result<(), ImgError> {
        fs::write(path, self.to_ppm_bytes()).map_err(|e| io_err(path, e))
    }

    pub fn read_ppm(path: &Path) -> Result<Self, ImgError> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        let (magic, width, height, body) = parse_netpbm(&bytes, path)?;
        if magic != *b"P6" {
            return Err(format_err(path, format!("expected P6 magic, got {:?}", magic)));
        }
        let need = width * height * 3;
        if body.len() != need {
            return Err(format_err(
                path,
                format!("expected {} pixel bytes, got {}", need, body.len()),
            ));
        }
        Ok(Image {
            width,
            height,
            data: body.iter().map(|&b| b as f64 / 255.0).collect(),
        })
    }
}

/// Single-channel image in `[0,1]`; used for alpha masks and opacity maps.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Foreground test at the mask convention threshold (≥ 0.5).
    pub fn is_fg(&self, x: usize, y: usize) -> bool {
        self.get(x, y) >= 0.5
    }

    pub fn fg_count(&self) -> usize {
        self.data.iter().filter(|&&v| v >= 0.5).count()
    }

    pub fn channels(&self) -> &[f64] {
        &self.data
    }

    /// Serializes to P5 bytes (maxval 255).
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        write!(header, "P5\n{} {}\n255\n", self.width, self.height).unwrap();
        let mut bytes = header.into_bytes();
        bytes.extend(self.data.iter().map(|&v| quantize(v)));
        bytes
    }

    pub fn write_pgm(&self, path: &Path) -> Result<(), ImgError> {
        fs::write(path, self.to_pgm_bytes()).map_err(|e| io_err(path, e))
    }

    pub fn read_pgm(path: &Path) -> Result<Self, ImgError> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        let (magic, width, height, body) = parse_netpbm(&bytes, path)?;
        if magic != *b"P5" {
            return Err(format_err(path, format!("expected P5 magic, got {:?}", magic)));
        }
        let need = width * height;
        if body.len() != need {
            return Err(format_err(
                path,
                format!("expected {} pixel bytes, got {}", need, body.len()),
            ));
        }
        Ok(GrayImage {
            width,
            height,
            data: body.iter().map(|&b| b as f64 / 255.0).collect(),
        })
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Parses a netpbm header (magic, width, height, maxval) and returns the magic,
/// dimensions, and the raster body. Handles `#` comments and arbitrary
/// whitespace between header tokens, per the format spec.
fn parse_netpbm<'a>(
    bytes: &'a [u8],
    path: &Path,
) -> Result<([u8; 2], usize, usize, &'a [u8]), ImgError> {
    if bytes.len() < 2 {
        return Err(format_err(path, "file shorter than magic"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3]; // width, height, maxval
    for field in fields.iter_mut() {
        // Skip whitespace and comments.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(format_err(path, "truncated or non-numeric header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap();
        *field = text
            .parse()
            .map_err(|_| format_err(path, format!("bad header field {:?}", text)))?;
    }
    if fields[2] != 255 {
        return Err(format_err(path, format!("unsupported maxval {}", fields[2])));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(format_err(path, "missing raster separator"));
    }
    pos += 1;
    Ok((magic, fields[0], fields[1], &bytes[pos..]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng64;

    fn random_image(rng: &mut Rng64, w: usize, h: usize) -> Image {
        let mut img = Image::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.set(x, y, [rng.uniform(), rng.uniform(), rng.uniform()]);
            }
        }
        img
    }

    #[test]
    fn ppm_roundtrip_is_quantized_original() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ppm");
        let mut rng = Rng64::new(7);
        let img = random_image(&mut rng, 9, 5);
        img.write_ppm(&path).unwrap();
        let back = Image::read_ppm(&path).unwrap();
        assert_eq!(back.width(), 9);
        assert_eq!(back.height(), 5);
        for (orig, read) in img.channels().iter().zip(back.channels()) {
            let expect = (orig * 255.0).round() / 255.0;
            assert_eq!(*read, expect);
        }
    }

    #[test]
    fn write_is_byte_deterministic_and_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Rng64::new(8);
        let img = random_image(&mut rng, 16, 16);
        let a = img.to_ppm_bytes();
        let b = img.to_ppm_bytes();
        assert_eq!(a, b);
        // Quantize → read → write reproduces the same bytes.
        let path = dir.path().join("t.ppm");
        img.write_ppm(&path).unwrap();
        let back = Image::read_ppm(&path).unwrap();
        assert_eq!(back.to_ppm_bytes(), a);
    }

    #[test]
    fn pgm_roundtrip_and_fg_threshold() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let mut mask = GrayImage::new(4, 2);
        mask.set(0, 0, 1.0);
        mask.set(1, 0, 0.6);
        mask.set(2, 0, 0.4);
        mask.write_pgm(&path).unwrap();
        let back = GrayImage::read_pgm(&path).unwrap();
        assert!(back.is_fg(0, 0));
        assert!(back.is_fg(1, 0));
        assert!(!back.is_fg(2, 0));
        assert!(!back.is_fg(3, 1));
        assert_eq!(back.fg_count(), 2);
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        let bytes = b"P6\n# a comment\n2 1\n# another\n255\n\x00\x7f\xff\x01\x02\x03";
        std::fs::write(&path, bytes).unwrap();
        let img = Image::read_ppm(&path).unwrap();
        assert_eq!(img.width(), 2);
        assert_eq!(img.get(0, 0)[2], 1.0);
    }

    #[test]
    fn bad_magic_and_truncation_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ppm");
        std::fs::write(&path, b"P5\n2 1\n255\n\x00\x00").unwrap();
        let err = Image::read_ppm(&path).unwrap_err();
        assert!(err.to_string().contains("P6"));

        std::fs::write(&path, b"P6\n2 1\n255\n\x00\x00").unwrap();
        let err = Image::read_ppm(&path).unwrap_err();
        assert!(err.to_string().contains("expected 6 pixel bytes"));
    }
}
