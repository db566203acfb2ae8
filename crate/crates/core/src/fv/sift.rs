//! Upright dense SIFT with explicit receptive-field geometry.
//!
//! Each descriptor covers a `size x size` square split into 4x4 spatial bins
//! of `size/4` pixels; every bin holds an 8-direction histogram of gradient
//! magnitudes. Bin `b = 4 * row + col` owns dimensions `[8b, 8b + 8)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::image::GrayImage;

pub const SPATIAL_BINS: usize = 4;
pub const ORIENTATION_BINS: usize = 8;
pub const DESCRIPTOR_DIM: usize = SPATIAL_BINS * SPATIAL_BINS * ORIENTATION_BINS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalDescriptor {
    pub vector: Vec<f64>,
    /// Top-left corner of the receptive field.
    pub x: usize,
    pub y: usize,
    pub size: usize,
    pub bin_rects: [Rect; SPATIAL_BINS * SPATIAL_BINS],
}

impl LocalDescriptor {
    pub fn new(vector: Vec<f64>, x: usize, y: usize, size: usize) -> Result<Self> {
        if vector.len() != DESCRIPTOR_DIM {
            return Err(Error::Shape(format!(
                "descriptor must have {DESCRIPTOR_DIM} dimensions, got {}",
                vector.len()
            )));
        }
        Ok(LocalDescriptor { vector, x, y, size, bin_rects: bin_layout(x, y, size)? })
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x as f64 + self.size as f64 / 2.0, self.y as f64 + self.size as f64 / 2.0)
    }

    pub fn field(&self) -> Rect {
        Rect { x: self.x, y: self.y, width: self.size, height: self.size }
    }
}

fn bin_layout(x: usize, y: usize, size: usize) -> Result<[Rect; SPATIAL_BINS * SPATIAL_BINS]> {
    if size == 0 || size % SPATIAL_BINS != 0 {
        return Err(Error::Config(format!("descriptor size {size} must be a positive multiple of 4")));
    }
    let side = size / SPATIAL_BINS;
    Ok(std::array::from_fn(|b| Rect {
        x: x + (b % SPATIAL_BINS) * side,
        y: y + (b / SPATIAL_BINS) * side,
        width: side,
        height: side,
    }))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiftConfig {
    /// Descriptor side lengths in pixels (multiples of 4).
    pub sizes: Vec<usize>,
    pub stride: usize,
}

impl Default for SiftConfig {
    fn default() -> Self {
        SiftConfig { sizes: vec![8, 16], stride: 8 }
    }
}

impl SiftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("descriptor stride must be at least 1".into()));
        }
        if self.sizes.is_empty() {
            return Err(Error::Config("no descriptor sizes given".into()));
        }
        for &s in &self.sizes {
            bin_layout(0, 0, s)?;
        }
        Ok(())
    }
}

/// Per-pixel gradient magnitude and orientation in `[0, 2pi)`; central
/// differences inside, one-sided at the border.
fn gradients(img: &GrayImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width, img.height);
    let diff = |a: f64, b: f64, span: usize| if span == 0 { 0.0 } else { (a - b) / span as f64 };
    let mut mag = vec![0.0; w * h];
    let mut ori = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
            let gx = diff(img.get(x1, y), img.get(x0, y), x1 - x0);
            let gy = diff(img.get(x, y1), img.get(x, y0), y1 - y0);
            let i = y * w + x;
            mag[i] = gx.hypot(gy);
            let mut theta = gy.atan2(gx);
            if theta < 0.0 {
                theta += 2.0 * PI;
            }
            ori[i] = theta;
        }
    }
    (mag, ori)
}

/// Extracts descriptors on a regular grid for each size, in size order then
/// row-major grid order.
pub fn extract_dense_sift(image: &GrayImage, config: &SiftConfig) -> Result<Vec<LocalDescriptor>> {
    config.validate()?;
    let (mag, ori) = gradients(image);
    let mut out = Vec::new();
    for &size in &config.sizes {
        if size > image.width || size > image.height {
            log::warn!(
                "image {}x{} smaller than descriptor size {size}; no descriptors extracted at this size",
                image.width,
                image.height
            );
            continue;
        }
        let side = size / SPATIAL_BINS;
        let step = 2.0 * PI / ORIENTATION_BINS as f64;
        for y0 in (0..=image.height - size).step_by(config.stride) {
            for x0 in (0..=image.width - size).step_by(config.stride) {
                let mut v = vec![0.0; DESCRIPTOR_DIM];
                for dy in 0..size {
                    for dx in 0..size {
                        let i = (y0 + dy) * image.width + x0 + dx;
                        let m = mag[i];
                        if m == 0.0 {
                            continue;
                        }
                        let bin = (dy / side) * SPATIAL_BINS + dx / side;
                        let o = ori[i] / step;
                        let lo = o.floor();
                        let frac = o - lo;
                        let lo = lo as usize % ORIENTATION_BINS;
                        let hi = (lo + 1) % ORIENTATION_BINS;
                        v[bin * ORIENTATION_BINS + lo] += m * (1.0 - frac);
                        v[bin * ORIENTATION_BINS + hi] += m * frac;
                    }
                }
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if norm > 0.0 {
                    v.iter_mut().for_each(|a| *a /= norm);
                }
                out.push(LocalDescriptor::new(v, x0, y0, size)?);
            }
        }
    }
    Ok(out)
}
