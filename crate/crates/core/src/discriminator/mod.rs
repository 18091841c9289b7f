//! Conv body plus a batch head that compares current features against a cache.

mod cache;
mod head;

pub use cache::{CacheBank, CacheSlot, FeatureCache, DEFAULT_CACHE_CAPACITY};
pub use head::{batch_stddev, bsd_statistic, concat_with_cache, BatchHead, HeadKind};

use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::nn::ops::{leaky_relu, LEAKY_SLOPE};
use crate::nn::SpectralConv2d;
use crate::params::ParamStore;

pub const BODY_LAYERS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub features: [usize; BODY_LAYERS],
    pub head: HeadKind,
    pub cache_capacity: usize,
    pub spectral_norm: bool,
}

impl DiscriminatorConfig {
    pub fn toy() -> Self {
        Self {
            image_size: 32,
            in_channels: 3,
            features: [16, 32, 64, 128],
            head: HeadKind::Bsd,
            cache_capacity: DEFAULT_CACHE_CAPACITY,
            spectral_norm: true,
        }
    }

    pub fn full() -> Self {
        Self {
            image_size: 256,
            features: [64, 128, 256, 512],
            ..Self::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || !self.image_size.is_multiple_of(1 << BODY_LAYERS) {
            return Err(Error::Config(format!(
                "discriminator image size {} must be a positive multiple of 16",
                self.image_size
            )));
        }
        if self.features.contains(&0) || self.in_channels == 0 {
            return Err(Error::Config("discriminator channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Side length of the score map.
    pub fn score_size(&self) -> usize {
        self.image_size >> BODY_LAYERS
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    cfg: DiscriminatorConfig,
    store: ParamStore,
    body: Vec<SpectralConv2d>,
    head: BatchHead,
}

impl Discriminator {
    pub fn new(cfg: &DiscriminatorConfig, dtype: DType, rng: &mut ChaCha8Rng) -> Result<Self> {
        Self::from_store(cfg, ParamStore::new(dtype), rng)
    }

    pub fn from_store(cfg: &DiscriminatorConfig, mut store: ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let mut pb = store.builder(rng);
        let mut body = Vec::with_capacity(BODY_LAYERS);
        for (i, &f) in cfg.features.iter().enumerate() {
            let cin = if i == 0 { cfg.in_channels } else { cfg.features[i - 1] };
            body.push(SpectralConv2d::new(
                &mut pb.pp(format!("body{}", i + 1)),
                cin,
                f,
                3,
                2,
                cfg.spectral_norm,
            )?);
        }
        let head = BatchHead::new(&mut pb.pp("head"), cfg.head, cfg.features[BODY_LAYERS - 1])?;
        Ok(Self {
            cfg: cfg.clone(),
            store,
            body,
            head,
        })
    }

    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Self::from_store(&self.cfg, self.store.to_dtype(dtype)?, &mut rng)
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn body_layers(&self) -> &[SpectralConv2d] {
        &self.body
    }

    pub fn head(&self) -> &BatchHead {
        &self.head
    }

    /// One power-iteration step on every spectrally normalized body weight.
    pub fn power_iterate(&self) -> Result<()> {
        self.body.iter().try_for_each(|l| l.power_iterate())
    }

    /// Body features `[N, C, S/16, S/16]`.
    pub fn features(&self, image: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = image.dims4()?;
        let s = self.cfg.image_size;
        if c != self.cfg.in_channels || h != s || w != s {
            return Err(shape_err!(
                "discriminator expects [N, {}, {s}, {s}] input, got {:?}",
                self.cfg.in_channels,
                image.dims()
            ));
        }
        let mut x = image.clone();
        for layer in &self.body {
            x = leaky_relu(&layer.forward(&x)?, LEAKY_SLOPE)?;
        }
        Ok(x)
    }

    /// Scores precomputed body features against `cache`.
    pub fn score_features(&self, features: &Tensor, cache: &FeatureCache) -> Result<Tensor> {
        self.head.forward(features, cache)
    }

    /// Scores `image` against one cache, returning the score map and body features.
    pub fn score(&self, image: &Tensor, cache: &FeatureCache) -> Result<(Tensor, Tensor)> {
        let f = self.features(image)?;
        let s = self.score_features(&f, cache)?;
        Ok((s, f))
    }

    /// Scores against the selected cache of `bank`, optionally pushing the
    /// features into it afterwards.
    pub fn forward(
        &self,
        image: &Tensor,
        bank: &mut CacheBank,
        slot: CacheSlot,
        update_cache: bool,
    ) -> Result<Tensor> {
        let (s, f) = self.score(image, bank.get(slot))?;
        if update_cache {
            bank.get_mut(slot).push_batch(&f)?;
        }
        Ok(s)
    }
}
