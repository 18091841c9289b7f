//! U-Net generator with a transformer bottleneck and style-modulated decoder.

mod modconv;
mod vit;

pub use modconv::{demodulate, modulate, modulated_conv, ModulatedConv2d, DEMOD_EPS};
pub use vit::{ExtendedVit, VitShape};

use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::nn::ops::{leaky_relu, upsample2, LEAKY_SLOPE};
use crate::nn::{Conv2d, Linear};
use crate::params::{Init, ParamBuilder, ParamStore};

pub const LEVELS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub features: [usize; LEVELS],
    pub token_dim: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
    pub style_modulation: bool,
    pub demod_eps: f64,
}

impl GeneratorConfig {
    pub fn toy() -> Self {
        Self {
            image_size: 32,
            in_channels: 3,
            out_channels: 3,
            features: [16, 32, 64, 128],
            token_dim: 64,
            n_blocks: 2,
            n_heads: 4,
            mlp_ratio: 4,
            style_modulation: true,
            demod_eps: DEMOD_EPS,
        }
    }

    pub fn full() -> Self {
        Self {
            image_size: 256,
            features: [48, 96, 192, 384],
            token_dim: 384,
            n_blocks: 12,
            n_heads: 6,
            ..Self::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size == 0 || !self.image_size.is_multiple_of(1 << LEVELS) {
            return bad(format!(
                "generator image size {} must be a positive multiple of 16",
                self.image_size
            ));
        }
        if self.features.contains(&0) || self.in_channels == 0 || self.out_channels == 0 {
            return bad("generator channel counts must be positive".into());
        }
        if self.n_heads == 0 || !self.token_dim.is_multiple_of(self.n_heads) {
            return bad(format!(
                "token dimension {} is not divisible by {} heads",
                self.token_dim, self.n_heads
            ));
        }
        if self.mlp_ratio == 0 {
            return bad("mlp ratio must be positive".into());
        }
        if self.demod_eps <= 0.0 {
            return bad("demodulation epsilon must be positive".into());
        }
        Ok(())
    }

    pub fn bottleneck_size(&self) -> usize {
        self.image_size >> LEVELS
    }

    pub fn n_tokens(&self) -> usize {
        self.bottleneck_size() * self.bottleneck_size()
    }
}

/// 3x3 conv followed by a leaky ReLU, He-initialized with a zero bias.
fn leaky_conv(pb: &mut ParamBuilder, cin: usize, cout: usize, stride: usize) -> Result<Conv2d> {
    let init = Init::he_leaky(cin * 9, LEAKY_SLOPE);
    Conv2d::with_init(pb, cin, cout, 3, stride, init, Some(Init::Const(0.0)))
}

#[derive(Debug, Clone)]
struct EncoderBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    down: Conv2d,
}

/// Per-level decoder: upsampling conv, modulated conv and its style projection.
#[derive(Debug, Clone)]
struct DecoderBlock {
    up: Conv2d,
    modconv: ModulatedConv2d,
    style: Option<Linear>,
}

/// Intermediate values exposed for tests and diagnostics.
#[derive(Debug, Clone)]
pub struct GeneratorTrace {
    pub output: Tensor,
    pub style_token: Option<Tensor>,
    /// Style vectors fed to the modulated convs, innermost level first.
    pub styles: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Generator {
    cfg: GeneratorConfig,
    store: ParamStore,
    input: Conv2d,
    encoder: Vec<EncoderBlock>,
    vit: ExtendedVit,
    decoder: Vec<DecoderBlock>,
    output: Conv2d,
}

impl Generator {
    /// Builds a freshly initialized generator.
    pub fn new(cfg: &GeneratorConfig, dtype: DType, rng: &mut ChaCha8Rng) -> Result<Self> {
        Self::from_store(cfg, ParamStore::new(dtype), rng)
    }

    /// Builds a generator on top of `store`, creating any missing parameters.
    pub fn from_store(cfg: &GeneratorConfig, mut store: ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let f = cfg.features;
        let mut pb = store.builder(rng);
        let input = leaky_conv(&mut pb.pp("input"), cfg.in_channels, f[0], 1)?;
        let mut encoder = Vec::with_capacity(LEVELS);
        for i in 0..LEVELS {
            let cin = if i == 0 { f[0] } else { f[i - 1] };
            let mut p = pb.pp(format!("enc{}", i + 1));
            encoder.push(EncoderBlock {
                conv1: leaky_conv(&mut p.pp("conv1"), cin, f[i], 1)?,
                conv2: leaky_conv(&mut p.pp("conv2"), f[i], f[i], 1)?,
                down: leaky_conv(&mut p.pp("down"), f[i], f[i], 2)?,
            });
        }
        let vit = ExtendedVit::new(
            &mut pb.pp("vit"),
            VitShape {
                n_tokens: cfg.n_tokens(),
                features: f[LEVELS - 1],
                token_dim: cfg.token_dim,
                n_blocks: cfg.n_blocks,
                n_heads: cfg.n_heads,
                mlp_ratio: cfg.mlp_ratio,
                style_token: cfg.style_modulation,
            },
        )?;
        let mut decoder = Vec::with_capacity(LEVELS);
        for i in 0..LEVELS {
            let cin = if i == LEVELS - 1 { f[i] } else { f[i + 1] };
            let mut p = pb.pp(format!("dec{}", i + 1));
            let up = leaky_conv(&mut p.pp("up"), cin, f[i], 1)?;
            let modconv = ModulatedConv2d::new(&mut p.pp("mod"), 2 * f[i], f[i], 3, cfg.demod_eps)?;
            let style = if cfg.style_modulation {
                let bound = 0.1 / (cfg.token_dim as f64).sqrt();
                Some(Linear::with_init(
                    &mut p.pp("style"),
                    cfg.token_dim,
                    2 * f[i],
                    Init::Uniform(bound),
                    Init::Const(1.0),
                )?)
            } else {
                None
            };
            decoder.push(DecoderBlock { up, modconv, style });
        }
        let output = Conv2d::new(&mut pb.pp("output"), f[0], cfg.out_channels, 1, 1, true)?;
        Ok(Self {
            cfg: cfg.clone(),
            store,
            input,
            encoder,
            vit,
            decoder,
            output,
        })
    }

    /// Rebuilds the same architecture over a converted copy of the parameters.
    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Self::from_store(&self.cfg, self.store.to_dtype(dtype)?, &mut rng)
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Maps the final style token to the style vector of decoder level `level` (0-based).
    pub fn style_project(&self, style_token: &Tensor, level: usize) -> Result<Tensor> {
        let block = self
            .decoder
            .get(level)
            .ok_or_else(|| Error::InvalidArgument(format!("no decoder level {level}")))?;
        match &block.style {
            Some(lin) => lin.forward(style_token),
            None => Err(Error::InvalidArgument(
                "style modulation is disabled for this generator".into(),
            )),
        }
    }

    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(xs)?.output)
    }

    pub fn forward_trace(&self, xs: &Tensor) -> Result<GeneratorTrace> {
        let (b, c, h, w) = xs.dims4()?;
        let s = self.cfg.image_size;
        if c != self.cfg.in_channels || h != s || w != s {
            return Err(shape_err!(
                "generator expects [B, {}, {s}, {s}] input, got {:?}",
                self.cfg.in_channels,
                xs.dims()
            ));
        }
        let act = |t: Tensor| leaky_relu(&t, LEAKY_SLOPE);
        let mut x = act(self.input.forward(xs)?)?;
        let mut skips = Vec::with_capacity(LEVELS);
        for blk in &self.encoder {
            x = act(blk.conv1.forward(&x)?)?;
            x = act(blk.conv2.forward(&x)?)?;
            skips.push(x.clone());
            x = act(blk.down.forward(&x)?)?;
        }

        let (_, fb, hb, wb) = x.dims4()?;
        let tokens = x.flatten_from(2)?.transpose(1, 2)?;
        let (tokens, style_token) = self.vit.forward(&tokens)?;
        x = tokens.transpose(1, 2)?.reshape((b, fb, hb, wb))?;

        let mut styles = Vec::with_capacity(LEVELS);
        for (i, blk) in self.decoder.iter().enumerate().rev() {
            let up = act(blk.up.forward(&upsample2(&x)?)?)?;
            let cat = Tensor::cat(&[&skips[i], &up], 1)?;
            let style = match (&blk.style, &style_token) {
                (Some(lin), Some(tok)) => lin.forward(tok)?,
                _ => Tensor::ones((b, blk.modconv.in_channels()), xs.dtype(), xs.device())?,
            };
            x = act(blk.modconv.forward(&cat, &style)?)?;
            styles.push(style);
        }
        let output = self.output.forward(&x)?.tanh()?;
        Ok(GeneratorTrace {
            output,
            style_token,
            styles,
        })
    }
}
