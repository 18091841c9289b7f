//! Synthetic two-domain dataset: the same random shapes, tinted red (A) or green (B).

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;

use super::io::encode_png;
use super::{seeded_rng, Dataset, DataConfig, Domain, Split};
use crate::error::{Error, Result};

/// Added to the domain's own color channel (in `[0, 1]` units).
pub const TINT_BOOST: f32 = 0.25;
/// Subtracted from the other two channels.
pub const TINT_CUT: f32 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub image_size: u32,
    pub train_count: usize,
    pub test_count: usize,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            image_size: 32,
            train_count: 200,
            test_count: 100,
            seed: 0,
        }
    }
}

fn tint(domain: Domain, rgb: [f32; 3]) -> [f32; 3] {
    let boosted = match domain {
        Domain::A => 0,
        Domain::B => 1,
    };
    let mut out = rgb;
    for (k, v) in out.iter_mut().enumerate() {
        *v = if k == boosted { *v + TINT_BOOST } else { *v - TINT_CUT }.clamp(0.0, 1.0);
    }
    out
}

/// Renders one untinted toy image.
fn render(size: u32, rng: &mut impl Rng) -> Vec<[f32; 3]> {
    let bg: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.8));
    let mut px = vec![bg; (size * size) as usize];
    let s = size as f32;
    for _ in 0..rng.random_range(1..=3) {
        let color: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        let cx = rng.random_range(0.0..s);
        let cy = rng.random_range(0.0..s);
        let r = rng.random_range(s * 0.1..s * 0.35);
        let circle = rng.random_bool(0.5);
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
                let inside = if circle {
                    dx * dx + dy * dy <= r * r
                } else {
                    dx.abs() <= r && dy.abs() <= r * 0.6
                };
                if inside {
                    px[(y * size + x) as usize] = color;
                }
            }
        }
    }
    px
}

fn to_rgb8(size: u32, px: &[[f32; 3]]) -> RgbImage {
    RgbImage::from_fn(size, size, |x, y| {
        let p = px[(y * size + x) as usize];
        Rgb(p.map(|v| (v * 255.0).round() as u8))
    })
}

/// Writes `trainA/trainB/testA/testB` PNGs under `root` and opens the result.
/// Output bytes depend only on `spec`.
pub fn make_toy_dataset(root: &Path, spec: &ToySpec) -> Result<Dataset> {
    if spec.image_size == 0 || spec.train_count == 0 {
        return Err(Error::Config("toy dataset needs a positive image size and count".into()));
    }
    for split in [Split::Train, Split::Test] {
        let count = match split {
            Split::Train => spec.train_count,
            Split::Test => spec.test_count,
        };
        for domain in [Domain::A, Domain::B] {
            let dir = root.join(split.dir_name(domain));
            fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
            let mut rng = seeded_rng(&[spec.seed, 0x70, split as u64, domain as u64]);
            for i in 0..count {
                let px: Vec<[f32; 3]> = render(spec.image_size, &mut rng)
                    .into_iter()
                    .map(|p| tint(domain, p))
                    .collect();
                let bytes = encode_png(&to_rgb8(spec.image_size, &px))?;
                let path = dir.join(format!("{i:05}.png"));
                fs::write(&path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
            }
        }
    }
    Dataset::open(&DataConfig {
        root: root.to_path_buf(),
        load_size: spec.image_size as usize,
        crop_size: spec.image_size as usize,
        hflip: true,
    })
}
