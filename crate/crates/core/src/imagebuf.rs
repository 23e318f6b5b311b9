use image::RgbImage;

use crate::error::{Error, Result};

/// Interleaved RGB image with `f64` samples in `[0, 255]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FloatImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "{} samples for a {height}x{width} RGB image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        Self {
            height: img.height() as usize,
            width: img.width() as usize,
            data: img.as_raw().iter().map(|&v| v as f64).collect(),
        }
    }

    /// Quantizes to 8 bits, rounding half to even.
    pub fn to_rgb8(&self) -> RgbImage {
        let raw = self
            .data
            .iter()
            .map(|v| v.clamp(0.0, 255.0).round_ties_even() as u8)
            .collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer size")
    }

    /// Bilinear resize (half-pixel centres), independent per channel.
    pub fn resize(&self, height: usize, width: usize) -> FloatImage {
        use drsnet_tensor::ops::bilinear_taps;
        let ty = bilinear_taps(self.height, height);
        let tx = bilinear_taps(self.width, width);
        let mut data = Vec::with_capacity(height * width * 3);
        let px = |r: usize, c: usize, ch: usize| self.data[(r * self.width + c) * 3 + ch];
        for t in &ty {
            for s in &tx {
                for ch in 0..3 {
                    let a = px(t.lo, s.lo, ch) + (px(t.lo, s.hi, ch) - px(t.lo, s.lo, ch)) * s.frac;
                    let b = px(t.hi, s.lo, ch) + (px(t.hi, s.hi, ch) - px(t.hi, s.lo, ch)) * s.frac;
                    data.push(a + (b - a) * t.frac);
                }
            }
        }
        FloatImage {
            height,
            width,
            data,
        }
    }
}
