//! Grayscale floating-point image buffer and 16-bit on-disk round-trip.

use std::path::Path;

use crate::error::{Error, Result};

/// Row-major grayscale image with real-valued intensities in gray levels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Fixed-point scale used in the 16-bit container: 1/256 gray level per code.
pub const STORE_SCALE: f64 = 256.0;

impl ImageF {
    pub fn new(width: usize, height: usize) -> Self {
        ImageF {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        ImageF {
            width,
            height,
            data,
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        ImageF {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Store as 16-bit PNG at 1/256-gray-level resolution.
    pub fn save_png16(&self, path: &Path) -> Result<()> {
        let mut buf = ::image::ImageBuffer::<::image::Luma<u16>, Vec<u16>>::new(
            self.width as u32,
            self.height as u32,
        );
        for (x, y, p) in buf.enumerate_pixels_mut() {
            let v = self.get(x as usize, y as usize);
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parameter(format!(
                    "pixel ({x},{y}) = {v} not storable"
                )));
            }
            let code = (v * STORE_SCALE).round().min(u16::MAX as f64);
            *p = ::image::Luma([code as u16]);
        }
        buf.save(path)?;
        Ok(())
    }

    pub fn load_png16(path: &Path) -> Result<Self> {
        let img = ::image::open(path)?.into_luma16();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = img.pixels().map(|p| p.0[0] as f64 / STORE_SCALE).collect();
        Ok(ImageF {
            width: w,
            height: h,
            data,
        })
    }

    /// Export for inspection: clamp to [0, gray_max], rescale to 8 bits.
    pub fn save_png8(&self, path: &Path, gray_max: f64) -> Result<()> {
        let mut buf = ::image::ImageBuffer::<::image::Luma<u8>, Vec<u8>>::new(
            self.width as u32,
            self.height as u32,
        );
        for (x, y, p) in buf.enumerate_pixels_mut() {
            let v = self.get(x as usize, y as usize).clamp(0.0, gray_max);
            *p = ::image::Luma([(v / gray_max * 255.0).round() as u8]);
        }
        buf.save(path)?;
        Ok(())
    }
}
