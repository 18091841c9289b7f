//! Two-domain image datasets laid out as `trainA/trainB/testA/testB`.

pub mod augment;
pub mod io;
mod toy;

pub use toy::{make_toy_dataset, ToySpec, TINT_BOOST, TINT_CUT};

use std::path::{Path, PathBuf};

use candle_core::Tensor;
use image::imageops::FilterType;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    A = 0,
    B = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train = 0,
    Test = 1,
}

impl Split {
    pub fn dir_name(self, domain: Domain) -> &'static str {
        match (self, domain) {
            (Split::Train, Domain::A) => "trainA",
            (Split::Train, Domain::B) => "trainB",
            (Split::Test, Domain::A) => "testA",
            (Split::Test, Domain::B) => "testB",
        }
    }
}

/// Random stream determined by `parts` alone.
pub fn seeded_rng(parts: &[u64; 4]) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    for (chunk, p) in seed.chunks_exact_mut(8).zip(parts) {
        chunk.copy_from_slice(&p.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Resizes the smaller side to `size`, center-crops and converts to a
/// `[3, size, size]` tensor; the unaugmented path used for test images and
/// translation inputs.
pub fn fit_square(img: &image::Rgb32FImage, size: u32) -> Result<Tensor> {
    let img = augment::resize_smaller_side(img, size, FilterType::Triangle);
    io::image_to_tensor(&augment::center_crop(&img, size)?)
}

/// [`fit_square`] on an image file.
pub fn load_square(path: &Path, size: u32) -> Result<Tensor> {
    fit_square(&io::load_rgb(path)?, size)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub root: PathBuf,
    /// Training images are resized so their smaller side has this length...
    pub load_size: usize,
    /// ...then randomly cropped to this square size.
    pub crop_size: usize,
    pub hflip: bool,
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop_size == 0 || self.load_size < self.crop_size {
            return Err(Error::Config(format!(
                "data load size {} must be >= crop size {} > 0",
                self.load_size, self.crop_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    cfg: DataConfig,
    files: [[Vec<PathBuf>; 2]; 2],
}

impl Dataset {
    /// Indexes the four split directories; both training directories must be non-empty.
    pub fn open(cfg: &DataConfig) -> Result<Self> {
        cfg.validate()?;
        let mut files: [[Vec<PathBuf>; 2]; 2] = Default::default();
        for split in [Split::Train, Split::Test] {
            for domain in [Domain::A, Domain::B] {
                let dir = cfg.root.join(split.dir_name(domain));
                files[split as usize][domain as usize] = match (split, dir.is_dir()) {
                    (Split::Test, false) => Vec::new(),
                    _ => io::list_images(&dir)?,
                };
            }
        }
        for domain in [Domain::A, Domain::B] {
            if files[0][domain as usize].is_empty() {
                return Err(Error::Config(format!(
                    "no training images in {}",
                    cfg.root.join(Split::Train.dir_name(domain)).display()
                )));
            }
        }
        Ok(Self { cfg: cfg.clone(), files })
    }

    pub fn config(&self) -> &DataConfig {
        &self.cfg
    }

    pub fn root(&self) -> &Path {
        &self.cfg.root
    }

    pub fn files(&self, split: Split, domain: Domain) -> &[PathBuf] {
        &self.files[split as usize][domain as usize]
    }

    pub fn len(&self, split: Split, domain: Domain) -> usize {
        self.files(split, domain).len()
    }

    /// Loads one image as `[3, S, S]` in `[-1, 1]`. With an RNG the training
    /// augmentation (resize, random crop, flip) is applied; without one the
    /// image is resized and center-cropped.
    pub fn load(&self, split: Split, domain: Domain, index: usize, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let path = self
            .files(split, domain)
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("image index {index} out of range")))?;
        let img = io::load_rgb(path)?;
        let crop = self.cfg.crop_size as u32;
        let img = match rng {
            Some(rng) => {
                let img = augment::resize_smaller_side(&img, self.cfg.load_size as u32, FilterType::Triangle);
                let img = augment::random_crop(&img, crop, rng)?;
                if self.cfg.hflip && rng.random_bool(0.5) {
                    augment::hflip(&img)
                } else {
                    img
                }
            }
            None => return fit_square(&img, crop),
        };
        io::image_to_tensor(&img)
    }

    /// Index of the `position`-th training sample: every epoch is an
    /// independent shuffle, seeded per domain.
    pub fn train_index(&self, domain: Domain, position: u64, seed: u64) -> usize {
        let n = self.len(Split::Train, domain) as u64;
        let epoch = position / n;
        let mut perm: Vec<usize> = (0..n as usize).collect();
        perm.shuffle(&mut seeded_rng(&[seed, 0xda7a, domain as u64, epoch]));
        perm[(position % n) as usize]
    }

    /// Augmented training batch number `step`; a pure function of its arguments.
    pub fn train_batch(&self, domain: Domain, step: u64, batch_size: usize, seed: u64) -> Result<Tensor> {
        let items = (0..batch_size)
            .map(|k| {
                let pos = step * batch_size as u64 + k as u64;
                let idx = self.train_index(domain, pos, seed);
                let mut rng = seeded_rng(&[seed, 0xa09, domain as u64, pos]);
                self.load(Split::Train, domain, idx, Some(&mut rng))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&items, 0)?)
    }

    /// Unaugmented test images `start..start + count` in file order.
    pub fn test_batch(&self, domain: Domain, start: usize, count: usize) -> Result<Tensor> {
        let items = (start..start + count)
            .map(|i| self.load(Split::Test, domain, i, None))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&items, 0)?)
    }
}
