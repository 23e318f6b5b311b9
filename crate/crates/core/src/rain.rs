//! Synthetic rain-streak generation and compositing.
//!
//! A rain layer is a sparse random seed map (one Bernoulli draw per pixel)
//! blurred by a tilted rectangular Gaussian streak kernel, then alpha-blended
//! onto the image with a bright streak colour.

use std::ops::RangeInclusive;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagebuf::FloatImage;

pub const KERNEL_LENGTHS: RangeInclusive<u32> = 40..=60;
pub const KERNEL_WIDTHS: [u32; 3] = [3, 5, 7];
pub const MAX_ANGLE_DEG: f64 = 30.0;
pub const TRANSPARENCY_RANGE: (f64, f64) = (0.6, 0.9);
pub const INTENSITY_RANGE: (f64, f64) = (1.0 / 250.0, 1.0 / 245.0);
pub const DEFAULT_STREAK_COLOR: f64 = 255.0;

/// Normalized kernel taps below this value are dropped: at full opacity and
/// maximum contrast they shift an 8-bit pixel by less than half a level.
pub const KERNEL_FLOOR: f64 = 0.5 / 255.0;

/// One rainfall configuration: streak geometry plus blend strength and
/// per-pixel seed probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RainParams {
    pub kernel_length: u32,
    pub kernel_width: u32,
    /// Tilt of the streak's long axis from horizontal, in degrees.
    pub angle: f64,
    pub transparency: f64,
    pub intensity: f64,
}

impl RainParams {
    /// Sparsest configuration of the sampling ranges at the given tilt.
    pub fn minimum_density(angle: f64) -> Self {
        Self {
            kernel_length: *KERNEL_LENGTHS.start(),
            kernel_width: KERNEL_WIDTHS[0],
            angle,
            transparency: TRANSPARENCY_RANGE.0,
            intensity: INTENSITY_RANGE.0,
        }
    }

    /// Checks every field against the sampling ranges.
    pub fn validate(&self) -> Result<()> {
        let within = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        if !KERNEL_LENGTHS.contains(&self.kernel_length) {
            return Err(Error::Config(format!("kernel_length {} outside 40..=60", self.kernel_length)));
        }
        if !KERNEL_WIDTHS.contains(&self.kernel_width) {
            return Err(Error::Config(format!("kernel_width {} not in {{3, 5, 7}}", self.kernel_width)));
        }
        if !within(self.angle, (-MAX_ANGLE_DEG, MAX_ANGLE_DEG)) {
            return Err(Error::Config(format!("angle {} outside [-30, 30]", self.angle)));
        }
        if !within(self.transparency, TRANSPARENCY_RANGE) {
            return Err(Error::Config(format!("transparency {} outside [0.6, 0.9]", self.transparency)));
        }
        if !within(self.intensity, INTENSITY_RANGE) {
            return Err(Error::Config(format!("intensity {} outside [1/250, 1/245]", self.intensity)));
        }
        Ok(())
    }
}

/// Draws every field uniformly from its range (length as an integer, width as
/// a choice from the fixed set, the rest continuous).
pub fn sample_rain_params<R: Rng + ?Sized>(rng: &mut R) -> RainParams {
    let kernel_length = rng.random_range(KERNEL_LENGTHS);
    let kernel_width = KERNEL_WIDTHS[rng.random_range(0..KERNEL_WIDTHS.len())];
    let angle = rng.random_range(-MAX_ANGLE_DEG..=MAX_ANGLE_DEG);
    let transparency = rng.random_range(TRANSPARENCY_RANGE.0..=TRANSPARENCY_RANGE.1);
    let intensity = rng.random_range(INTENSITY_RANGE.0..=INTENSITY_RANGE.1);
    RainParams {
        kernel_length,
        kernel_width,
        angle,
        transparency,
        intensity,
    }
}

/// Covered fraction predicted by `length * width * intensity`, ignoring
/// overlap between streaks. Can exceed 1 at high densities.
pub fn expected_coverage(params: &RainParams) -> f64 {
    params.kernel_length as f64 * params.kernel_width as f64 * params.intensity
}

/// Probability that a pixel is touched by at least one streak, given the
/// number of nonzero kernel taps. Exact for the seed model used by
/// [`generate_rain_mask`].
pub fn union_coverage(kernel: &StreakKernel, intensity: f64) -> f64 {
    1.0 - (1.0 - intensity).powi(kernel.footprint() as i32)
}

/// Row-major streak profile with unit maximum.
#[derive(Clone, Debug, PartialEq)]
pub struct StreakKernel {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl StreakKernel {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Number of strictly positive taps.
    pub fn footprint(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }
}

/// Axis-aligned Gaussian profile: `width` rows by `length` columns with
/// sigmas of a quarter of each side, so the rectangle spans +-2 sigma.
pub fn gaussian_profile(row: f64, col: f64, length: u32, width: u32) -> f64 {
    let sl = length as f64 / 4.0;
    let sw = width as f64 / 4.0;
    let x = col - (length as f64 - 1.0) / 2.0;
    let y = row - (width as f64 - 1.0) / 2.0;
    (-(x * x) / (2.0 * sl * sl) - (y * y) / (2.0 * sw * sw)).exp()
}

/// Builds the tilted streak kernel. The long axis runs horizontally at zero
/// angle; a positive angle raises the right end of the streak.
///
/// The tilted kernel is produced by inverse-mapping every output tap into the
/// axis-aligned profile and sampling it bilinearly (zero outside). After
/// normalization, taps below [`KERNEL_FLOOR`] are zeroed and the kernel is
/// cropped to its nonzero bounding box.
pub fn build_streak_kernel(length: u32, width: u32, angle: f64) -> Result<StreakKernel> {
    if length == 0 || width == 0 {
        return Err(Error::Config("streak kernel dimensions must be positive".into()));
    }
    if width > length {
        return Err(Error::Config(format!(
            "streak width {width} exceeds length {length}"
        )));
    }
    if !angle.is_finite() || angle.abs() > 90.0 {
        return Err(Error::Config(format!("streak angle {angle} outside [-90, 90]")));
    }
    let (l, w) = (length as usize, width as usize);
    let base: Vec<f64> = (0..w * l)
        .map(|i| gaussian_profile((i / l) as f64, (i % l) as f64, length, width))
        .collect();
    let sample = |r: f64, c: f64| -> f64 {
        let (r0, c0) = (r.floor(), c.floor());
        let (fr, fc) = (r - r0, c - c0);
        let tap = |ri: f64, ci: f64| -> f64 {
            if ri < 0.0 || ci < 0.0 || ri >= w as f64 || ci >= l as f64 {
                0.0
            } else {
                base[ri as usize * l + ci as usize]
            }
        };
        (1.0 - fr) * ((1.0 - fc) * tap(r0, c0) + fc * tap(r0, c0 + 1.0))
            + fr * ((1.0 - fc) * tap(r0 + 1.0, c0) + fc * tap(r0 + 1.0, c0 + 1.0))
    };

    let theta = angle.to_radians();
    let (sin, cos) = theta.sin_cos();
    let (lf, wf) = (length as f64, width as f64);
    let ext_w = lf * cos.abs() + wf * sin.abs();
    let ext_h = lf * sin.abs() + wf * cos.abs();
    // Box parity follows the axis it is closest to, so that axis-aligned
    // angles sample exactly on the profile grid.
    let (pw, ph) = if cos.abs() >= sin.abs() { (l, w) } else { (w, l) };
    let fit = |ext: f64, parity: usize| {
        let mut n = ext.ceil() as usize + 2;
        if n % 2 != parity % 2 {
            n += 1;
        }
        n
    };
    let (bw, bh) = (fit(ext_w, pw), fit(ext_h, ph));
    let mut values = vec![0.0; bw * bh];
    for r in 0..bh {
        let v = r as f64 - (bh as f64 - 1.0) / 2.0;
        for c in 0..bw {
            let u = c as f64 - (bw as f64 - 1.0) / 2.0;
            let x = u * cos - v * sin;
            let y = u * sin + v * cos;
            values[r * bw + c] = sample(y + (wf - 1.0) / 2.0, x + (lf - 1.0) / 2.0);
        }
    }

    let max = values.iter().cloned().fold(0.0, f64::max);
    for v in &mut values {
        *v /= max;
        if *v < KERNEL_FLOOR {
            *v = 0.0;
        }
    }

    let nz_row = |r: usize| values[r * bw..(r + 1) * bw].iter().any(|&v| v > 0.0);
    let nz_col = |c: usize| (0..bh).any(|r| values[r * bw + c] > 0.0);
    let r0 = (0..bh).find(|&r| nz_row(r)).unwrap_or(0);
    let r1 = (0..bh).rev().find(|&r| nz_row(r)).unwrap_or(0);
    let c0 = (0..bw).find(|&c| nz_col(c)).unwrap_or(0);
    let c1 = (0..bw).rev().find(|&c| nz_col(c)).unwrap_or(0);
    let (height, width) = (r1 - r0 + 1, c1 - c0 + 1);
    let mut cropped = Vec::with_capacity(height * width);
    for r in r0..=r1 {
        cropped.extend_from_slice(&values[r * bw + c0..=r * bw + c1]);
    }
    Ok(StreakKernel {
        height,
        width,
        values: cropped,
    })
}

/// Rain layer in `[0, 1]` plus the number of seeds that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct RainMask {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub seeds: usize,
}

impl RainMask {
    /// Fraction of pixels with nonzero rain.
    pub fn covered_fraction(&self) -> f64 {
        self.values.iter().filter(|&&v| v > 0.0).count() as f64 / self.values.len() as f64
    }
}

/// Draws the seed map and blurs it with the streak kernel.
///
/// Seeds live on a canvas that extends the image by the kernel size minus
/// one on the top and left, so every image pixel can be reached by exactly
/// `kernel.height * kernel.width` seed positions and border pixels are rained
/// on as often as interior ones. One uniform draw per canvas position in
/// row-major order decides the seed (`u < intensity`), which makes the seed
/// set monotone in the intensity for a fixed random stream.
pub fn generate_rain_mask<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    params: &RainParams,
    rng: &mut R,
) -> Result<RainMask> {
    let kernel = build_streak_kernel(params.kernel_length, params.kernel_width, params.angle)?;
    rain_mask_with_kernel(height, width, &kernel, params.intensity, rng)
}

pub fn rain_mask_with_kernel<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    kernel: &StreakKernel,
    intensity: f64,
    rng: &mut R,
) -> Result<RainMask> {
    if height < kernel.height || width < kernel.width {
        return Err(Error::Shape(format!(
            "{height}x{width} image is smaller than the {}x{} streak kernel",
            kernel.height, kernel.width
        )));
    }
    let (kh, kw) = (kernel.height, kernel.width);
    let (ch, cw) = (height + kh - 1, width + kw - 1);
    let mut values = vec![0.0; height * width];
    let mut seeds = 0;
    for cy in 0..ch {
        for cx in 0..cw {
            if rng.random::<f64>() >= intensity {
                continue;
            }
            seeds += 1;
            // Kernel tap (ky, kx) lands on pixel (cy + ky - kh + 1, cx + kx - kw + 1).
            let ky0 = (kh - 1).saturating_sub(cy);
            let ky1 = kh.min(height + kh - 1 - cy);
            let kx0 = (kw - 1).saturating_sub(cx);
            let kx1 = kw.min(width + kw - 1 - cx);
            for ky in ky0..ky1 {
                let row = (cy + ky + 1 - kh) * width;
                let krow = &kernel.values[ky * kw..(ky + 1) * kw];
                for kx in kx0..kx1 {
                    values[row + cx + kx + 1 - kw] += krow[kx];
                }
            }
        }
    }
    for v in &mut values {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(RainMask {
        height,
        width,
        values,
        seeds,
    })
}

/// `out = (1 - t*m) * image + t*m * color` per channel, clamped to [0, 255].
pub fn composite_rain(
    image: &FloatImage,
    mask: &RainMask,
    transparency: f64,
    streak_color: f64,
) -> Result<FloatImage> {
    if image.height != mask.height || image.width != mask.width {
        return Err(Error::Shape(format!(
            "image is {}x{} but rain mask is {}x{}",
            image.height, image.width, mask.height, mask.width
        )));
    }
    let mut out = image.clone();
    for (px, &m) in out.data.chunks_mut(3).zip(&mask.values) {
        let a = transparency * m;
        for v in px {
            *v = ((1.0 - a) * *v + a * streak_color).clamp(0.0, 255.0);
        }
    }
    Ok(out)
}

/// Samples parameters, generates a mask and composites it in one go.
pub fn add_rain<R: Rng + ?Sized>(
    image: &FloatImage,
    streak_color: f64,
    rng: &mut R,
) -> Result<(FloatImage, RainParams)> {
    let params = sample_rain_params(rng);
    let mask = generate_rain_mask(image.height, image.width, &params, rng)?;
    Ok((composite_rain(image, &mask, params.transparency, streak_color)?, params))
}
