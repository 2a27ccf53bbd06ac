//! Grayscale intensity images and the file I/O around them.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("sample count {got} does not match {width}x{height}")]
    SizeMismatch { width: usize, height: usize, got: usize },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

/// Row-major grayscale image with intensities nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    samples: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, samples: Vec<f32>) -> Result<Self, ImageError> {
        if samples.len() != width * height {
            return Err(ImageError::SizeMismatch {
                width,
                height,
                got: samples.len(),
            });
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(ImageError::NonFinite(i));
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            samples: vec![value; width * height],
        }
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut samples = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                samples.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            samples,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f32] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.samples[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        self.samples[y * self.width + x] = value;
    }

    /// Bilinear sample at subpixel `(x, y)`, pixel centers on integer
    /// coordinates. Points outside `[0, w-1] x [0, h-1]` read as 0.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f32 {
        if !(x >= 0.0 && y >= 0.0) {
            return 0.0;
        }
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if x > max_x || y > max_y {
            return 0.0;
        }
        // Truncation is floor here since both are non-negative.
        let x0 = (x as usize).min(self.width.saturating_sub(2));
        let y0 = (y as usize).min(self.height.saturating_sub(2));
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Copies the `size x size` window whose top-left corner is `(x0, y0)`,
    /// wrapping columns modulo the image width.
    pub fn crop_wrapping(&self, x0: usize, y0: usize, size: usize) -> Image {
        Image::from_fn(size, size, |x, y| {
            self.get((x0 + x) % self.width, y0 + y)
        })
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().map(|&s| s as f64).sum::<f64>() / self.samples.len().max(1) as f64
    }

    /// Loads PNG or PGM, converting color to luma and normalizing to `[0, 1]`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| ImageError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn from_dynamic(img: &DynamicImage) -> Self {
        let luma = img.to_luma16();
        let (w, h) = luma.dimensions();
        let samples = luma
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / u16::MAX as f32)
            .collect();
        Self {
            width: w as usize,
            height: h as usize,
            samples,
        }
    }

    pub fn to_luma8(&self) -> ImageBuffer<Luma<u8>, Vec<u8>> {
        let raw = self
            .samples
            .iter()
            .map(|&s| (s.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer size matches dimensions")
    }

    pub fn to_luma16(&self) -> ImageBuffer<Luma<u16>, Vec<u16>> {
        let raw = self
            .samples
            .iter()
            .map(|&s| (s.clamp(0.0, 1.0) * u16::MAX as f32).round() as u16)
            .collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer size matches dimensions")
    }

    /// Saves as 16-bit grayscale; the format follows the file extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let path = path.as_ref();
        self.to_luma16().save(path).map_err(|source| ImageError::Write {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn save_8bit(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let path = path.as_ref();
        self.to_luma8().save(path).map_err(|source| ImageError::Write {
            path: path.display().to_string(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_sample_count() {
        assert!(matches!(
            Image::new(3, 2, vec![0.0; 5]),
            Err(ImageError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn rejects_nan() {
        assert!(matches!(
            Image::new(2, 1, vec![0.0, f32::NAN]),
            Err(ImageError::NonFinite(1))
        ));
    }

    #[test]
    fn bilinear_hits_grid_values_and_midpoints() {
        let img = Image::from_fn(4, 3, |x, y| (x + 10 * y) as f32);
        assert_eq!(img.sample_bilinear(2.0, 1.0), 12.0);
        assert_eq!(img.sample_bilinear(3.0, 2.0), 23.0);
        assert!((img.sample_bilinear(1.5, 0.5) - 6.5).abs() < 1e-6);
        assert_eq!(img.sample_bilinear(-0.1, 1.0), 0.0);
        assert_eq!(img.sample_bilinear(1.0, 2.01), 0.0);
    }

    #[test]
    fn crop_wraps_columns() {
        let img = Image::from_fn(5, 2, |x, _| x as f32);
        let tile = img.crop_wrapping(3, 0, 2);
        assert_eq!(tile.samples(), &[3.0, 4.0, 3.0, 4.0]);
        let tile = img.crop_wrapping(4, 0, 2);
        assert_eq!(tile.samples(), &[4.0, 0.0, 4.0, 0.0]);
    }

    #[test]
    fn png_round_trip_16bit() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(7, 5, |x, y| ((x * 5 + y) as f32) / 40.0);
        let path = dir.path().join("a.png");
        img.save(&path).unwrap();
        let back = Image::load(&path).unwrap();
        assert_eq!(back.width(), 7);
        for (a, b) in img.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn pgm_round_trip_8bit() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(4, 4, |x, y| ((x + y) as f32) / 6.0);
        let path = dir.path().join("a.pgm");
        img.save_8bit(&path).unwrap();
        let back = Image::load(&path).unwrap();
        for (a, b) in img.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() < 3e-3);
        }
    }
}
