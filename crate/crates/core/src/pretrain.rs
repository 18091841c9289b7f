//! Masked-patch inpainting pretraining for the generator.

use std::f64::consts::PI;
use std::path::Path;

use candle_core::{DType, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::data::{augment, io, seeded_rng, Dataset, Domain, Split};
use crate::error::{shape_err, Error, Result};
use crate::generator::Generator;
use crate::metrics::MetricsWriter;
use crate::nn::ops::{l1, scalar};
use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub patch_size: usize,
    pub mask_prob: f64,
    pub epochs: usize,
    /// Stops after this many optimizer steps when non-zero.
    pub max_steps: u64,
    /// Upper bound on samples drawn per epoch (0 = whole dataset).
    pub max_samples_per_epoch: usize,
    pub batch_size: usize,
    /// Learning rate at batch size 512; scaled linearly with the batch size.
    pub base_lr: f64,
    pub weight_decay: f64,
    pub cycles: usize,
    pub rotation_deg: f64,
    pub hflip_prob: f64,
    pub jitter: f64,
}

impl PretrainConfig {
    pub fn full() -> Self {
        Self {
            patch_size: 32,
            mask_prob: 0.4,
            epochs: 500,
            max_steps: 0,
            max_samples_per_epoch: 32_768,
            batch_size: 64,
            base_lr: 5e-3,
            weight_decay: 0.05,
            cycles: 5,
            rotation_deg: 10.0,
            hflip_prob: 0.5,
            jitter: 0.2,
        }
    }

    pub fn toy() -> Self {
        Self {
            patch_size: 8,
            epochs: 100,
            max_steps: 200,
            max_samples_per_epoch: 0,
            batch_size: 16,
            base_lr: 0.08,
            cycles: 1,
            ..Self::full()
        }
    }

    pub fn validate(&self, image_size: usize) -> Result<()> {
        if self.patch_size == 0 || !image_size.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "image size {image_size} is not divisible by patch size {}",
                self.patch_size
            )));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) || !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::Config("pretrain probabilities must lie in [0, 1]".into()));
        }
        if self.batch_size == 0 || self.cycles == 0 || self.base_lr <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("pretrain batch, cycles and learning rate must be positive".into()));
        }
        Ok(())
    }

    /// `base_lr * batch / 512`.
    pub fn lr(&self) -> f64 {
        self.base_lr * self.batch_size as f64 / 512.0
    }

    /// Number of optimizer steps for a dataset of `n_samples` images.
    pub fn total_steps(&self, n_samples: usize) -> u64 {
        let per_epoch = match self.max_samples_per_epoch {
            0 => n_samples,
            cap => n_samples.min(cap),
        };
        let steps = (self.epochs * per_epoch.div_ceil(self.batch_size)) as u64;
        match self.max_steps {
            0 => steps,
            m => steps.min(m),
        }
    }
}

/// Cosine annealing from `base` to zero, restarted `cycles` times over `total_steps`.
pub fn cosine_restart_lr(step: u64, total_steps: u64, cycles: usize, base: f64) -> f64 {
    let cycle_len = total_steps.div_ceil(cycles.max(1) as u64).max(1);
    let t = (step % cycle_len) as f64 / cycle_len as f64;
    base * (1.0 + (PI * t).cos()) / 2.0
}

/// Zeroes each `patch x patch` cell of `[B, C, H, W]` images independently
/// with probability `p`. Returns the masked images and the decision grid,
/// row-major per sample (`true` = masked).
pub fn mask_patches(
    images: &Tensor,
    patch: usize,
    p: f64,
    rng: &mut impl Rng,
) -> Result<(Tensor, Vec<Vec<bool>>)> {
    let (b, _, h, w) = images.dims4()?;
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(shape_err!("{h}x{w} images cannot be tiled by {patch}x{patch} patches"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("mask probability {p} outside [0, 1]")));
    }
    let (gh, gw) = (h / patch, w / patch);
    let grids: Vec<Vec<bool>> = (0..b).map(|_| (0..gh * gw).map(|_| rng.random_bool(p)).collect()).collect();
    let keep: Vec<f32> = grids.iter().flatten().map(|&m| if m { 0.0 } else { 1.0 }).collect();
    let keep = Tensor::from_vec(keep, (b, 1, gh, 1, gw, 1), images.device())?
        .broadcast_as((b, 1, gh, patch, gw, patch))?
        .reshape((b, 1, h, w))?
        .to_dtype(images.dtype())?;
    Ok((images.broadcast_mul(&keep)?, grids))
}

/// Generator plus AdamW state for the inpainting task.
pub struct Pretrainer {
    pub generator: Generator,
    cfg: PretrainConfig,
    opt: Adam,
    total_steps: u64,
    step: u64,
}

impl Pretrainer {
    pub fn new(generator: Generator, cfg: &PretrainConfig, total_steps: u64) -> Result<Self> {
        cfg.validate(generator.config().image_size)?;
        let opt = Adam::new(
            generator.store().vars_with_prefix(""),
            AdamConfig::adamw(0.9, 0.999, cfg.weight_decay),
        )?;
        Ok(Self {
            generator,
            cfg: cfg.clone(),
            opt,
            total_steps: total_steps.max(1),
            step: 0,
        })
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        cosine_restart_lr(self.step, self.total_steps, self.cfg.cycles, self.cfg.lr())
    }

    /// One AdamW step on L1 reconstruction of the whole image; returns the loss.
    pub fn step(&mut self, batch: &Tensor, rng: &mut ChaCha8Rng) -> Result<f64> {
        let (masked, _) = mask_patches(batch, self.cfg.patch_size, self.cfg.mask_prob, rng)?;
        let recon = self.generator.forward(&masked)?;
        let loss = l1(&recon, batch)?;
        let value = scalar(&loss)?;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                what: "reconstruction loss".into(),
                iteration: self.step,
                detail: format!("{value}"),
            });
        }
        let lr = self.lr();
        self.opt.step(&loss.backward()?, lr)?;
        self.step += 1;
        Ok(value)
    }
}

/// Pretraining sample number `position` from the union of both training
/// domains, with rotation, flip and color jitter on top of the crop.
pub fn pretrain_sample(ds: &Dataset, cfg: &PretrainConfig, position: u64, seed: u64) -> Result<Tensor> {
    let na = ds.len(Split::Train, Domain::A);
    let n = na + ds.len(Split::Train, Domain::B);
    let mut rng = seeded_rng(&[seed, 0x9e, 0, position]);
    let k = rng.random_range(0..n);
    let (domain, idx) = if k < na { (Domain::A, k) } else { (Domain::B, k - na) };
    let t = ds.load(Split::Train, domain, idx, Some(&mut rng))?;
    let img = io::tensor_to_image(&t)?;
    let angle = rng.random_range(-cfg.rotation_deg..=cfg.rotation_deg) as f32;
    let mut img = augment::rotate(&img, angle);
    if rng.random_bool(cfg.hflip_prob) {
        img = augment::hflip(&img);
    }
    let img = augment::color_jitter(&img, cfg.jitter as f32, &mut rng);
    io::image_to_tensor(&img)
}

pub fn pretrain_batch(ds: &Dataset, cfg: &PretrainConfig, step: u64, seed: u64) -> Result<Tensor> {
    let items = (0..cfg.batch_size)
        .map(|k| pretrain_sample(ds, cfg, step * cfg.batch_size as u64 + k as u64, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::stack(&items, 0)?)
}

/// Fraction of masked cells in a decision grid.
pub fn masked_fraction(grids: &[Vec<bool>]) -> f64 {
    let total: usize = grids.iter().map(|g| g.len()).sum();
    let masked: usize = grids.iter().flatten().filter(|&&m| m).count();
    masked as f64 / total.max(1) as f64
}

/// Pretrains a fresh generator on the union of both training domains, writing
/// `out_dir/metrics.jsonl` and the generator checkpoint
/// `out_dir/pretrain.safetensors`. Returns the per-step losses.
pub fn run_pretrain(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    out_dir: &Path,
    mut on_log: impl FnMut(u64, f64),
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let seed = cfg.train.seed;
    let n = ds.len(Split::Train, Domain::A) + ds.len(Split::Train, Domain::B);
    let total = cfg.pretrain.total_steps(n);
    let mut init = seeded_rng(&[seed, 0x9e7, 0, 0]);
    let g = Generator::new(&cfg.generator, DType::F32, &mut init)?;
    let mut pt = Pretrainer::new(g, &cfg.pretrain, total)?;
    let mut writer = MetricsWriter::append(&out_dir.join("metrics.jsonl"))?;
    let log_every = cfg.train.log_every;
    let mut losses = Vec::with_capacity(total as usize);
    let mut window = 0.0;
    for step in 0..total {
        let batch = pretrain_batch(ds, &cfg.pretrain, step, seed)?;
        let mut rng = seeded_rng(&[seed, 0x3a5c, 0, step]);
        let lr = pt.lr();
        let loss = pt.step(&batch, &mut rng)?;
        losses.push(loss);
        window += loss;
        let done = step + 1;
        if done % log_every == 0 || done == total {
            let count = (done - 1) % log_every + 1;
            let mean = window / count as f64;
            writer.write(done, &[("loss_recon", mean), ("lr", lr)])?;
            on_log(done, mean);
            window = 0.0;
        }
    }
    crate::trainer::save_generator(&out_dir.join("pretrain.safetensors"), cfg, &pt.generator, total)?;
    Ok(losses)
}
