//! Seeded synthetic two-class dataset for desk-scale checks.
//!
//! Class `plain` images are a smooth gradient with mild noise. Class
//! `texture` images are the same background with high-contrast stripes
//! inside one quadrant ([`SIGNAL_QUADRANT`]).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::image::{write_pgm, GrayImage};

pub const IMAGE_SIZE: usize = 64;
pub const CLASS_NAMES: [&str; 2] = ["plain", "texture"];
pub const TEXTURE_CLASS: usize = 1;
/// Quadrant index of the texture: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
pub const SIGNAL_QUADRANT: usize = 0;
/// Gap between the texture and the quadrant sides facing the image centre,
/// wide enough that descriptors crossing the quadrant border see no texture.
pub const TEXTURE_MARGIN: usize = 10;

/// `(x, y, width, height)` of quadrant `q` in a `size x size` image.
pub fn quadrant_rect(q: usize, size: usize) -> (usize, usize, usize, usize) {
    let half = size / 2;
    ((q % 2) * half, (q / 2) * half, half, half)
}

/// `(x, y, width, height)` of the textured region inside quadrant `q`.
pub fn texture_rect(q: usize, size: usize) -> (usize, usize, usize, usize) {
    let (x, y, w, h) = quadrant_rect(q, size);
    let x = if q % 2 == 1 { x + TEXTURE_MARGIN } else { x };
    let y = if q / 2 == 1 { y + TEXTURE_MARGIN } else { y };
    (x, y, w - TEXTURE_MARGIN, h - TEXTURE_MARGIN)
}

pub fn quadrant_of(x: usize, y: usize, size: usize) -> usize {
    let half = size / 2;
    usize::from(x >= half) + 2 * usize::from(y >= half)
}

fn background(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let noise = Normal::new(0.0, 0.02).unwrap();
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let base = rng.random_range(0.35..0.65);
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let t = (x as f64 * dx + y as f64 * dy) / size as f64;
            data.push((base + 0.15 * t + noise.sample(rng)).clamp(0.0, 1.0));
        }
    }
    data
}

/// One image of `class`.
pub fn synth_image(rng: &mut ChaCha8Rng, class: usize) -> GrayImage {
    let size = IMAGE_SIZE;
    let mut data = background(rng, size);
    if class == TEXTURE_CLASS {
        let (x0, y0, w, h) = texture_rect(SIGNAL_QUADRANT, size);
        let period = rng.random_range(3..=5) as f64;
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let (dx, dy) = (angle.cos(), angle.sin());
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                let s = ((x as f64 * dx + y as f64 * dy) * std::f64::consts::TAU / period + phase).sin();
                data[y * size + x] = 0.5 + 0.45 * s.signum();
            }
        }
    }
    GrayImage::new(size, size, data).expect("synthetic image dimensions")
}

/// `per_class` images of each class, interleaved, with labels.
pub fn synth_dataset(per_class: usize, seed: u64) -> (Vec<GrayImage>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(2 * per_class);
    let mut labels = Vec::with_capacity(2 * per_class);
    for _ in 0..per_class {
        for class in 0..CLASS_NAMES.len() {
            images.push(synth_image(&mut rng, class));
            labels.push(class);
        }
    }
    (images, labels)
}

/// Writes the dataset as `<dir>/<class>/<nnn>.pgm`.
pub fn write_dataset(dir: impl AsRef<Path>, per_class: usize, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    let (images, labels) = synth_dataset(per_class, seed);
    for name in CLASS_NAMES {
        std::fs::create_dir_all(dir.join(name))?;
    }
    for (i, (img, &label)) in images.iter().zip(&labels).enumerate() {
        write_pgm(img, dir.join(CLASS_NAMES[label]).join(format!("{:03}.pgm", i / 2)))?;
    }
    Ok(())
}
