//! Heatmap rendering: a diverging colormap (blue negative, green neutral,
//! yellow to dark red positive) and an alpha-overlay variant.

use std::path::Path;

use crate::error::{Coord, Error, Result};
use crate::image::{RgbImage, RgbaImage};
use crate::tensor::Tensor;
use crate::textfmt::{write_atomic, TextReader, TextWriter};

pub const RELMAP_HEADER: &str = "RELPROP-RELMAP v1";

/// Alpha given to pixels without relevance, as a fraction of full opacity.
pub const ALPHA_FLOOR: f64 = 0.1;

/// Piecewise-linear map from normalized relevance in `[-1, 1]` to RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorMap {
    anchors: Vec<(f64, [u8; 3])>,
}

impl ColorMap {
    pub fn new(anchors: Vec<(f64, [u8; 3])>) -> Result<Self> {
        if anchors.len() < 2 {
            return Err(Error::Config("colormap needs at least two anchors".into()));
        }
        if anchors.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::Config("colormap anchors must be strictly increasing".into()));
        }
        Ok(ColorMap { anchors })
    }

    pub fn anchors(&self) -> &[(f64, [u8; 3])] {
        &self.anchors
    }

    pub fn color(&self, v: f64) -> [u8; 3] {
        let first = self.anchors[0];
        let last = self.anchors[self.anchors.len() - 1];
        if v <= first.0 {
            return first.1;
        }
        if v >= last.0 {
            return last.1;
        }
        let k = self.anchors.partition_point(|&(p, _)| p <= v);
        let (p0, c0) = self.anchors[k - 1];
        let (p1, c1) = self.anchors[k];
        let t = (v - p0) / (p1 - p0);
        let mut rgb = [0u8; 3];
        for ch in 0..3 {
            let a = c0[ch] as f64;
            let b = c1[ch] as f64;
            rgb[ch] = (a + (b - a) * t).round().clamp(0.0, 255.0) as u8;
        }
        rgb
    }
}

impl Default for ColorMap {
    fn default() -> Self {
        ColorMap {
            anchors: vec![
                (-1.0, [0, 0, 255]),
                (0.0, [0, 255, 0]),
                (0.5, [255, 255, 0]),
                (1.0, [139, 0, 0]),
            ],
        }
    }
}

fn check_map(map: &Tensor) -> Result<(usize, usize)> {
    let (h, w) = match *map.shape() {
        [h, w] => (h, w),
        ref s => return Err(Error::Shape(format!("relevance map must be 2-D, got {s:?}"))),
    };
    let bad: Vec<Coord> = map
        .data()
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_finite())
        .map(|(i, _)| Coord { x: i % w, y: i / w })
        .collect();
    if !bad.is_empty() {
        return Err(Error::NonFinite(bad));
    }
    Ok((h, w))
}

fn max_abs(map: &Tensor) -> f64 {
    map.data().iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Renders a `height x width` relevance map normalized by its own max `|R|`.
pub fn render(map: &Tensor, cmap: &ColorMap) -> Result<RgbImage> {
    let (h, w) = check_map(map)?;
    let scale = max_abs(map);
    let data = map
        .data()
        .iter()
        .flat_map(|&r| cmap.color(if scale > 0.0 { r / scale } else { 0.0 }))
        .collect();
    RgbImage::new(w, h, data)
}

/// Copies `base` and uses normalized `|R|` (floored at [`ALPHA_FLOOR`]) as alpha.
pub fn overlay_alpha(base: &RgbImage, map: &Tensor) -> Result<RgbaImage> {
    let (h, w) = check_map(map)?;
    if (w, h) != (base.width, base.height) {
        return Err(Error::Shape(format!(
            "map is {w}x{h} but image is {}x{}",
            base.width, base.height
        )));
    }
    let scale = max_abs(map);
    let mut data = Vec::with_capacity(4 * w * h);
    for (rgb, &r) in base.data.chunks_exact(3).zip(map.data()) {
        let level = if scale > 0.0 { r.abs() / scale } else { 0.0 };
        let alpha = (level.clamp(ALPHA_FLOOR, 1.0) * 255.0).floor() as u8;
        data.extend_from_slice(rgb);
        data.push(alpha);
    }
    Ok(RgbaImage { width: w, height: h, data })
}

/// Serializes a `height x width` relevance map (values round-trip exactly).
pub fn relevance_to_string(map: &Tensor) -> Result<String> {
    check_shape(map)?;
    let mut w = TextWriter::new(RELMAP_HEADER);
    w.tensor("relevance", map);
    Ok(w.finish())
}

pub fn relevance_from_str(src: &str) -> Result<Tensor> {
    let mut r = TextReader::new(src, RELMAP_HEADER)?;
    let map = r.tensor("relevance")?;
    r.finish()?;
    check_shape(&map)?;
    Ok(map)
}

pub fn save_relevance(map: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), relevance_to_string(map)?.as_bytes())
}

pub fn load_relevance(path: impl AsRef<Path>) -> Result<Tensor> {
    relevance_from_str(&std::fs::read_to_string(path)?)
}

fn check_shape(map: &Tensor) -> Result<()> {
    if map.ndim() != 2 {
        return Err(Error::Validation(format!("relevance map must be 2-D, got shape {:?}", map.shape())));
    }
    Ok(())
}
