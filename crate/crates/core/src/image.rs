//! Image and mask values plus lossless PNG I/O.
//!
//! Intensities are stored as `f64` in `[0, 1]`, interleaved row-major:
//! the value of channel `ch` at `(row, col)` lives at
//! `(row * width + col) * channels + ch`.

use std::fs;
use std::path::Path;

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!(
                "zero dimension {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "unsupported channel count {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::InvalidImage(format!(
                "data length {} != {height}*{width}*{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image from a per-sample function `f(row, col, channel)`.
    pub fn from_fn<F>(height: usize, width: usize, channels: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize, usize) -> f64,
    {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.index(row, col, ch)]
    }

    /// All channel values of one pixel.
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let start = self.index(row, col, 0);
        &self.data[start..start + self.channels]
    }

    /// Writes a value; callers inside the crate only ever store convex
    /// combinations of existing intensities.
    #[inline]
    pub(crate) fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        debug_assert!((0.0..=1.0).contains(&value), "intensity {value}");
        let i = self.index(row, col, ch);
        self.data[i] = value;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Per-channel mean and population standard deviation of a square window.
    pub fn window_stats(&self, row: usize, col: usize, size: usize) -> Vec<(f64, f64)> {
        let count = (size * size) as f64;
        (0..self.channels)
            .map(|ch| {
                let mut sum = 0.0;
                let mut sq = 0.0;
                for r in row..row + size {
                    for c in col..col + size {
                        let v = self.get(r, c, ch);
                        sum += v;
                        sq += v * v;
                    }
                }
                let mean = sum / count;
                let var = (sq / count - mean * mean).max(0.0);
                (mean, var.sqrt())
            })
            .collect()
    }
}

/// Binary per-pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "mask bits {} != {height}*{width}",
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    /// Mask with ones on the `size`×`size` square at `(row, col)`, clipped to the mask.
    pub fn square(height: usize, width: usize, row: usize, col: usize, size: usize) -> Self {
        let mut mask = Self::new(height, width);
        mask.fill_square(row, col, size);
        mask
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn fill_square(&mut self, row: usize, col: usize, size: usize) {
        for r in row..(row + size).min(self.height) {
            for c in col..(col + size).min(self.width) {
                self.set(r, c, true);
            }
        }
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn matches(&self, img: &Image) -> bool {
        self.height == img.height() && self.width == img.width()
    }

    fn check_same(&self, other: &PixelMask) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::DimensionMismatch(format!(
                "mask {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &PixelMask) -> Result<usize> {
        self.check_same(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a && **b)
            .count())
    }

    pub fn union_count(&self, other: &PixelMask) -> Result<usize> {
        self.check_same(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a || **b)
            .count())
    }

    pub fn union_with(&mut self, other: &PixelMask) -> Result<()> {
        self.check_same(other)?;
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
        Ok(())
    }

    /// Number of set pixels inside the `size`×`size` square at `(row, col)`.
    pub fn count_in_square(&self, row: usize, col: usize, size: usize) -> usize {
        let mut n = 0;
        for r in row..(row + size).min(self.height) {
            let base = r * self.width;
            n += self.bits[base + col..base + (col + size).min(self.width)]
                .iter()
                .filter(|b| **b)
                .count();
        }
        n
    }
}

/// Output = patch where the mask is set, otherwise the original pixel.
pub fn apply_mask_compose(x: &Image, patch: &Image, mask: &PixelMask) -> Result<Image> {
    if !x.same_shape(patch) {
        return Err(Error::DimensionMismatch(format!(
            "image {}x{}x{} vs patch {}x{}x{}",
            x.height(),
            x.width(),
            x.channels(),
            patch.height(),
            patch.width(),
            patch.channels()
        )));
    }
    if !mask.matches(x) {
        return Err(Error::DimensionMismatch(format!(
            "image {}x{} vs mask {}x{}",
            x.height(),
            x.width(),
            mask.height(),
            mask.width()
        )));
    }
    let ch = x.channels();
    let data = x
        .data()
        .chunks_exact(ch)
        .zip(patch.data().chunks_exact(ch))
        .zip(mask.bits())
        .flat_map(|((orig, p), bit)| if *bit { p } else { orig }.iter().copied())
        .collect();
    Image::new(x.height(), x.width(), ch, data)
}

fn read_png(path: &Path) -> Result<DynamicImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = image::guess_format(&bytes).map_err(|e| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if format != ImageFormat::Png {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            message: format!("{format:?} is not accepted, only lossless PNG"),
        });
    }
    image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Loads a PNG, scaling integer samples into `[0, 1]` (v/255 for 8-bit,
/// v/65535 for 16-bit). Alpha channels are dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let decoded = read_png(path)?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::InvalidImage(format!(
            "{} has zero dimension",
            path.display()
        )));
    }
    let (channels, data): (usize, Vec<f64>) = match decoded {
        DynamicImage::ImageLuma8(buf) => (1, scale8(buf.into_raw())),
        DynamicImage::ImageLumaA8(_) => (1, scale8(decoded.to_luma8().into_raw())),
        DynamicImage::ImageRgb8(buf) => (3, scale8(buf.into_raw())),
        DynamicImage::ImageRgba8(_) => (3, scale8(decoded.to_rgb8().into_raw())),
        DynamicImage::ImageLuma16(buf) => (1, scale16(buf.into_raw())),
        DynamicImage::ImageLumaA16(_) => (1, scale16(decoded.to_luma16().into_raw())),
        DynamicImage::ImageRgb16(buf) => (3, scale16(buf.into_raw())),
        DynamicImage::ImageRgba16(_) => (3, scale16(decoded.to_rgb16().into_raw())),
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                message: format!("sample layout {:?}", other.color()),
            })
        }
    };
    Image::new(h, w, channels, data)
}

fn scale8(raw: Vec<u8>) -> Vec<f64> {
    raw.into_iter().map(|v| f64::from(v) / 255.0).collect()
}

fn scale16(raw: Vec<u16>) -> Vec<f64> {
    raw.into_iter().map(|v| f64::from(v) / 65535.0).collect()
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_png(width: usize, height: usize, color: image::ExtendedColorType, raw: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut out);
    image::ImageEncoder::write_image(encoder, raw, width as u32, height as u32, color).map_err(
        |e| Error::InvalidImage(format!("png encoding failed: {e}")),
    )?;
    Ok(out)
}

/// Writes an 8-bit PNG; each intensity is rounded to the nearest of 256 levels.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let raw: Vec<u8> = img.data().iter().map(|v| quantize(*v)).collect();
    let color = if img.channels() == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    let bytes = encode_png(img.width(), img.height(), color, &raw)?;
    write_atomic(path.as_ref(), &bytes)
}

/// Writes a single-channel PNG with values {0, 255}.
pub fn save_mask(mask: &PixelMask, path: impl AsRef<Path>) -> Result<()> {
    let raw: Vec<u8> = mask.bits().iter().map(|b| if *b { 255 } else { 0 }).collect();
    let bytes = encode_png(mask.width(), mask.height(), image::ExtendedColorType::L8, &raw)?;
    write_atomic(path.as_ref(), &bytes)
}

/// Loads a mask from either a PNG (any nonzero sample is set) or a plain-text
/// matrix (`.txt`: one row per line, whitespace-separated 0/1 entries).
pub fn load_mask(path: impl AsRef<Path>) -> Result<PixelMask> {
    let path = path.as_ref();
    let is_text = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("txt"));
    if is_text {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return parse_mask_text(&text).map_err(|message| Error::Decode {
            path: path.to_path_buf(),
            message,
        });
    }
    let gray = read_png(path)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let bits = gray.into_raw().into_iter().map(|v| v > 0).collect();
    PixelMask::from_bits(h, w, bits)
}

pub fn parse_mask_text(text: &str) -> std::result::Result<PixelMask, String> {
    let mut bits = Vec::new();
    let mut width = None;
    let mut height = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<bool> = line
            .split_whitespace()
            .map(|tok| match tok {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(format!("line {}: bad mask entry {other:?}", lineno + 1)),
            })
            .collect::<std::result::Result<_, _>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(format!(
                    "line {}: row has {} entries, expected {w}",
                    lineno + 1,
                    row.len()
                ))
            }
            _ => {}
        }
        bits.extend(row);
        height += 1;
    }
    let width = width.ok_or_else(|| "empty mask".to_string())?;
    PixelMask::from_bits(height, width, bits).map_err(|e| e.to_string())
}

pub fn mask_to_text(mask: &PixelMask) -> String {
    let mut out = String::with_capacity(mask.height() * (mask.width() * 2 + 1));
    for r in 0..mask.height() {
        for c in 0..mask.width() {
            if c > 0 {
                out.push(' ');
            }
            out.push(if mask.get(r, c) { '1' } else { '0' });
        }
        out.push('\n');
    }
    out
}
