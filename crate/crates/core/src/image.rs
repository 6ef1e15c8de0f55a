//! Linear RGB buffers and the binary PPM/PGM codec.
//!
//! Output is always `P6` (or `P5` for grayscale) with maxval 255 and values
//! quantized by `round(255 * clamp(v, 0, 1))`. Input accepts `P6` and `P5`
//! with any maxval up to 65535; grayscale is replicated into three channels.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major `height x width x 3` image of `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch {
                expected: width * height * 3,
                got: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "image shapes differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    /// Values after the 8-bit round trip used for PPM output.
    pub fn quantized(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f64::from(quantize(v)) / 255.0).collect(),
        }
    }

    pub fn mean_color(&self) -> [f64; 3] {
        let n = (self.width * self.height).max(1) as f64;
        let mut acc = [0.0; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                acc[c] += px[c];
            }
        }
        acc.map(|v| v / n)
    }

    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| quantize(v)));
        out
    }

    /// `P5` from the first channel only.
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.chunks_exact(3).map(|px| quantize(px[0])));
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_ppm_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_pgm_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_ppm_bytes(&bytes).map_err(|message| Error::Image {
            path: path.display().to_string(),
            message,
        })
    }

    pub fn from_ppm_bytes(bytes: &[u8]) -> std::result::Result<Image, String> {
        let mut cursor = HeaderCursor { bytes, pos: 0 };
        let magic = cursor.token().ok_or("missing magic number")?;
        let channels = match magic.as_slice() {
            b"P6" => 3,
            b"P5" => 1,
            other => {
                return Err(format!(
                    "unsupported magic {:?} (expected P6 or P5)",
                    String::from_utf8_lossy(other)
                ))
            }
        };
        let width = cursor.number("width")?;
        let height = cursor.number("height")?;
        let maxval = cursor.number("maxval")?;
        if width == 0 || height == 0 {
            return Err(format!("empty image {width}x{height}"));
        }
        if maxval == 0 || maxval > 65535 {
            return Err(format!("maxval {maxval} out of range 1..=65535"));
        }
        // exactly one whitespace byte separates the header from the raster
        match bytes.get(cursor.pos) {
            Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
            _ => return Err("missing whitespace after maxval".into()),
        }
        let sample_bytes = if maxval > 255 { 2 } else { 1 };
        let expected = width * height * channels * sample_bytes;
        let raster = &bytes[cursor.pos..];
        if raster.len() < expected {
            return Err(format!(
                "truncated raster: expected {expected} bytes, found {}",
                raster.len()
            ));
        }
        let scale = maxval as f64;
        let samples: Vec<f64> = if sample_bytes == 1 {
            raster[..expected].iter().map(|&b| f64::from(b) / scale).collect()
        } else {
            raster[..expected]
                .chunks_exact(2)
                .map(|b| f64::from(u16::from_be_bytes([b[0], b[1]])) / scale)
                .collect()
        };
        let data = if channels == 3 {
            samples
        } else {
            samples.iter().flat_map(|&v| [v, v, v]).collect()
        };
        Ok(Image { width, height, data })
    }
}

/// `round(255 * clamp(v, 0, 1))`; NaN maps to 0.
#[inline]
pub fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
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

    fn token(&mut self) -> Option<Vec<u8>> {
        self.skip_space_and_comments();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        (self.pos > start).then(|| self.bytes[start..self.pos].to_vec())
    }

    fn number(&mut self, what: &str) -> std::result::Result<usize, String> {
        let tok = self.token().ok_or_else(|| format!("missing {what}"))?;
        std::str::from_utf8(&tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("invalid {what} {:?}", String::from_utf8_lossy(&tok)))
    }
}
