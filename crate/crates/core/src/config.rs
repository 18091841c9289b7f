//! Experiment configuration as flat `section.key = value` text.
//!
//! A document starts from a preset (`preset = toy` or `preset = full`, default
//! `full`) and overrides individual keys. Unknown and repeated keys are
//! rejected. [`ExperimentConfig::to_text`] writes every key in a fixed order, and
//! the hashes recorded in checkpoints are taken over that canonical text.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::DataConfig;
use crate::discriminator::{DiscriminatorConfig, HeadKind};
use crate::error::{Error, Result};
use crate::evaluation::{KidEstimator, ProtocolKind};
use crate::generator::GeneratorConfig;
use crate::losses::{GpForm, LossWeights};
use crate::pretrain::PretrainConfig;
use crate::trainer::{Scheduler, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Toy,
    Full,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Toy => "toy",
            Preset::Full => "full",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Preset::Toy),
            "full" => Ok(Preset::Full),
            _ => Err(Error::Config(format!("unknown preset {s:?} (toy, full)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractorKind {
    /// Fixed random projection of pooled pixels; fast and dependency free.
    Stub,
    /// Inception-v3 pool features from a safetensors weight file.
    Inception,
}

impl fmt::Display for ExtractorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExtractorKind::Stub => "stub",
            ExtractorKind::Inception => "inception",
        })
    }
}

impl FromStr for ExtractorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stub" => Ok(ExtractorKind::Stub),
            "inception" => Ok(ExtractorKind::Inception),
            _ => Err(Error::Config(format!("unknown extractor {s:?} (stub, inception)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub protocol: ProtocolKind,
    pub image_size: usize,
    /// KID subset size; 0 selects the protocol default.
    pub kid_subset: usize,
    pub kid_subsets: usize,
    pub kid_estimator: KidEstimator,
    pub extractor: ExtractorKind,
    pub inception_weights: PathBuf,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            protocol: ProtocolKind::Consistent,
            image_size: 256,
            kid_subset: 0,
            kid_subsets: 100,
            kid_estimator: KidEstimator::PairedU,
            extractor: ExtractorKind::Stub,
            inception_weights: PathBuf::new(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub pretrain: PretrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

/// Text form of one config value.
trait ConfigValue: Sized {
    fn render(&self) -> String;
    fn parse_value(s: &str) -> Result<Self>;
}

fn bad_value(s: &str, what: &str) -> Error {
    Error::Config(format!("cannot parse {s:?} as {what}"))
}

macro_rules! via_from_str {
    ($($t:ty => $what:expr),* $(,)?) => {$(
        impl ConfigValue for $t {
            fn render(&self) -> String {
                self.to_string()
            }
            fn parse_value(s: &str) -> Result<Self> {
                s.parse().map_err(|_| bad_value(s, $what))
            }
        }
    )*};
}

via_from_str!(usize => "an unsigned integer", u64 => "an unsigned integer", f64 => "a number");

macro_rules! via_enum {
    ($($t:ty),* $(,)?) => {$(
        impl ConfigValue for $t {
            fn render(&self) -> String {
                self.to_string()
            }
            fn parse_value(s: &str) -> Result<Self> {
                s.parse()
            }
        }
    )*};
}

via_enum!(HeadKind, GpForm, Scheduler, ProtocolKind, KidEstimator, ExtractorKind);

impl ConfigValue for bool {
    fn render(&self) -> String {
        self.to_string()
    }
    fn parse_value(s: &str) -> Result<Self> {
        match s {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(bad_value(s, "true or false")),
        }
    }
}

impl ConfigValue for PathBuf {
    fn render(&self) -> String {
        self.display().to_string()
    }
    fn parse_value(s: &str) -> Result<Self> {
        Ok(PathBuf::from(s))
    }
}

impl ConfigValue for Option<PathBuf> {
    fn render(&self) -> String {
        self.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
    }
    fn parse_value(s: &str) -> Result<Self> {
        Ok((!s.is_empty()).then(|| PathBuf::from(s)))
    }
}

impl<const N: usize> ConfigValue for [usize; N] {
    fn render(&self) -> String {
        self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
    fn parse_value(s: &str) -> Result<Self> {
        let parts = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| bad_value(s, "a list of integers")))
            .collect::<Result<Vec<_>>>()?;
        parts
            .try_into()
            .map_err(|_| bad_value(s, &format!("a list of {N} integers")))
    }
}

/// Declares, once, every key with the field it maps to. Expands to the ordered
/// key list, the renderer and the setter.
macro_rules! config_fields {
    ($($key:literal => $($field:ident).+;)*) => {
        const KEYS: &[&str] = &[$($key),*];

        fn render_fields(c: &ExperimentConfig) -> Vec<(&'static str, String)> {
            vec![$(($key, ConfigValue::render(&c.$($field).+))),*]
        }

        fn set_field(c: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
            match key {
                $($key => c.$($field).+ = ConfigValue::parse_value(value)
                    .map_err(|e| Error::Config(format!("{key}: {e}")))?,)*
                _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
            }
            Ok(())
        }
    };
}

config_fields! {
    "generator.image_size" => generator.image_size;
    "generator.in_channels" => generator.in_channels;
    "generator.out_channels" => generator.out_channels;
    "generator.features" => generator.features;
    "generator.token_dim" => generator.token_dim;
    "generator.n_blocks" => generator.n_blocks;
    "generator.n_heads" => generator.n_heads;
    "generator.mlp_ratio" => generator.mlp_ratio;
    "generator.style_modulation" => generator.style_modulation;
    "generator.demod_eps" => generator.demod_eps;
    "discriminator.features" => discriminator.features;
    "discriminator.head" => discriminator.head;
    "discriminator.cache_capacity" => discriminator.cache_capacity;
    "discriminator.spectral_norm" => discriminator.spectral_norm;
    "loss.lambda_cyc" => loss.lambda_cyc;
    "loss.lambda_idt" => loss.lambda_idt;
    "loss.lambda_consist" => loss.lambda_consist;
    "loss.lambda_gp" => loss.lambda_gp;
    "loss.gp_form" => loss.gp_form;
    "loss.legacy_gp_gamma" => loss.legacy_gp_gamma;
    "loss.consist_size" => loss.consist_size;
    "train.total_iters" => train.total_iters;
    "train.batch_size" => train.batch_size;
    "train.lr_gen" => train.lr_gen;
    "train.lr_disc" => train.lr_disc;
    "train.scheduler" => train.scheduler;
    "train.ema_momentum" => train.ema_momentum;
    "train.beta1" => train.beta1;
    "train.beta2" => train.beta2;
    "train.seed" => train.seed;
    "train.log_every" => train.log_every;
    "train.checkpoint_every" => train.checkpoint_every;
    "train.pretrained" => train.pretrained;
    "pretrain.patch_size" => pretrain.patch_size;
    "pretrain.mask_prob" => pretrain.mask_prob;
    "pretrain.epochs" => pretrain.epochs;
    "pretrain.max_steps" => pretrain.max_steps;
    "pretrain.max_samples_per_epoch" => pretrain.max_samples_per_epoch;
    "pretrain.batch_size" => pretrain.batch_size;
    "pretrain.base_lr" => pretrain.base_lr;
    "pretrain.weight_decay" => pretrain.weight_decay;
    "pretrain.cycles" => pretrain.cycles;
    "pretrain.rotation_deg" => pretrain.rotation_deg;
    "pretrain.hflip_prob" => pretrain.hflip_prob;
    "pretrain.jitter" => pretrain.jitter;
    "data.root" => data.root;
    "data.load_size" => data.load_size;
    "data.crop_size" => data.crop_size;
    "data.hflip" => data.hflip;
    "eval.protocol" => eval.protocol;
    "eval.image_size" => eval.image_size;
    "eval.kid_subset" => eval.kid_subset;
    "eval.kid_subsets" => eval.kid_subsets;
    "eval.kid_estimator" => eval.kid_estimator;
    "eval.extractor" => eval.extractor;
    "eval.inception_weights" => eval.inception_weights;
    "eval.seed" => eval.seed;
}

fn sha256_hex(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl ExperimentConfig {
    /// 32x32 desk-scale setup used by the tests and the toy dataset.
    pub fn toy() -> Self {
        Self {
            preset: Preset::Toy,
            generator: GeneratorConfig::toy(),
            discriminator: DiscriminatorConfig::toy(),
            loss: LossWeights::default(),
            train: TrainConfig::toy(),
            pretrain: PretrainConfig::toy(),
            data: DataConfig {
                root: PathBuf::from("data/toy"),
                load_size: 32,
                crop_size: 32,
                hflip: true,
            },
            eval: EvalConfig {
                image_size: 32,
                ..EvalConfig::default()
            },
        }
    }

    /// 256x256 setup with the final published hyperparameters.
    pub fn full() -> Self {
        Self {
            preset: Preset::Full,
            generator: GeneratorConfig::full(),
            discriminator: DiscriminatorConfig::full(),
            loss: LossWeights::default(),
            train: TrainConfig::full(),
            pretrain: PretrainConfig::full(),
            data: DataConfig {
                root: PathBuf::from("data"),
                load_size: 286,
                crop_size: 256,
                hflip: true,
            },
            eval: EvalConfig::default(),
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Toy => Self::toy(),
            Preset::Full => Self::full(),
        }
    }

    /// All keys in canonical order.
    pub fn keys() -> &'static [&'static str] {
        KEYS
    }

    /// Sets one `section.key` from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        set_field(self, key, value.trim())?;
        self.sync();
        Ok(())
    }

    /// Copies values the discriminator shares with the generator.
    fn sync(&mut self) {
        self.discriminator.image_size = self.generator.image_size;
        self.discriminator.in_channels = self.generator.out_channels;
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut preset = None;
        let mut pairs: Vec<(usize, String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k == "preset" {
                if preset.is_some() {
                    return Err(Error::Config(format!("line {}: preset given twice", lineno + 1)));
                }
                preset = Some(v.parse::<Preset>()?);
                continue;
            }
            if pairs.iter().any(|(_, seen, _)| seen == k) {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", lineno + 1)));
            }
            pairs.push((lineno + 1, k.to_string(), v.to_string()));
        }
        let mut cfg = Self::preset(preset.unwrap_or(Preset::Full));
        for (lineno, k, v) in pairs {
            cfg.set(&k, &v)
                .map_err(|e| Error::Config(format!("line {lineno}: {}", e.to_string().trim_start_matches("config error: "))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
            _ => Error::io(format!("reading {}", path.display()), e),
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.discriminator.image_size != self.generator.image_size {
            return Err(Error::Config("discriminator and generator image sizes differ".into()));
        }
        self.loss.validate()?;
        self.train.validate()?;
        self.pretrain.validate(self.generator.image_size)?;
        self.data.validate()?;
        if self.data.crop_size != self.generator.image_size {
            return Err(Error::Config(format!(
                "data crop size {} must equal the generator image size {}",
                self.data.crop_size, self.generator.image_size
            )));
        }
        if self.eval.image_size == 0 || self.eval.kid_subsets == 0 {
            return Err(Error::Config("eval image size and subset count must be positive".into()));
        }
        Ok(())
    }

    /// Canonical text: the preset line, then every key in fixed order.
    pub fn to_text(&self) -> String {
        let mut out = format!("preset = {}\n", self.preset);
        for (k, v) in render_fields(self) {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    fn hash_sections(&self, prefixes: &[&str]) -> String {
        let text: String = render_fields(self)
            .into_iter()
            .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        sha256_hex(&text)
    }

    /// Hash of the whole canonical text (preset line excluded).
    pub fn config_hash(&self) -> String {
        self.hash_sections(&[""])
    }

    /// Hash of everything that determines parameter shapes and forward passes.
    pub fn model_hash(&self) -> String {
        self.hash_sections(&["generator.", "discriminator."])
    }

    pub fn generator_hash(&self) -> String {
        self.hash_sections(&["generator."])
    }

    /// Evaluation protocol with the configured resolution and KID subset size.
    pub fn eval_protocol(&self) -> crate::evaluation::EvalProtocol {
        let p = crate::evaluation::EvalProtocol::new(self.eval.protocol).with_image_size(self.eval.image_size as u32);
        match self.eval.kid_subset {
            0 => p,
            n => p.with_kid_subset(n),
        }
    }
}
