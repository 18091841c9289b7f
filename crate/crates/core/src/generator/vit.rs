//! Transformer bottleneck with an extra learnable style token.

use candle_core::{Tensor, D};

use crate::error::{shape_err, Result};
use crate::nn::ops::softmax_last;
use crate::nn::{LayerNorm, Linear};
use crate::params::{Init, ParamBuilder};

#[derive(Debug, Clone)]
struct Attention {
    qkv: Linear,
    proj: Linear,
    n_heads: usize,
}

impl Attention {
    fn new(pb: &mut ParamBuilder, dim: usize, n_heads: usize) -> Result<Self> {
        Ok(Self {
            qkv: Linear::new(&mut pb.pp("qkv"), dim, 3 * dim)?,
            proj: Linear::new(&mut pb.pp("proj"), dim, dim)?,
            n_heads,
        })
    }

    fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let (b, n, d) = xs.dims3()?;
        let hd = d / self.n_heads;
        let qkv = self
            .qkv
            .forward(xs)?
            .reshape((b, n, 3, self.n_heads, hd))?
            .permute((2, 0, 3, 1, 4))?; // [3, B, H, N, hd]
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (hd as f64).sqrt())?;
        let attn = softmax_last(&scores)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, n, d))?;
        self.proj.forward(&out)
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl Block {
    fn new(pb: &mut ParamBuilder, dim: usize, n_heads: usize, mlp_ratio: usize) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(&mut pb.pp("ln1"), dim)?,
            attn: Attention::new(&mut pb.pp("attn"), dim, n_heads)?,
            ln2: LayerNorm::new(&mut pb.pp("ln2"), dim)?,
            fc1: Linear::new(&mut pb.pp("fc1"), dim, dim * mlp_ratio)?,
            fc2: Linear::new(&mut pb.pp("fc2"), dim * mlp_ratio, dim)?,
        })
    }

    fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let xs = (xs + self.attn.forward(&self.ln1.forward(xs)?)?)?;
        let h = self.fc1.forward(&self.ln2.forward(&xs)?)?.gelu()?;
        Ok((&xs + self.fc2.forward(&h)?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VitShape {
    pub n_tokens: usize,
    pub features: usize,
    pub token_dim: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
    pub style_token: bool,
}

/// Pixel-wise ViT. Each bottleneck position becomes a token, concatenated with
/// a learnable positional embedding; the optional style token is appended
/// before the transformer blocks and returned separately afterwards.
#[derive(Debug, Clone)]
pub struct ExtendedVit {
    shape: VitShape,
    pos_embed: Tensor,
    lin_in: Linear,
    style: Option<Tensor>,
    blocks: Vec<Block>,
    ln_out: LayerNorm,
    lin_out: Linear,
}

impl ExtendedVit {
    pub fn new(pb: &mut ParamBuilder, shape: VitShape) -> Result<Self> {
        let VitShape {
            n_tokens,
            features,
            token_dim,
            n_blocks,
            n_heads,
            mlp_ratio,
            style_token,
        } = shape;
        if n_heads == 0 || token_dim % n_heads != 0 {
            return Err(crate::Error::Config(format!(
                "token dimension {token_dim} is not divisible by {n_heads} heads"
            )));
        }
        let pos_embed = pb.get("pos_embed", &[n_tokens, features], Init::Normal(0.02))?;
        let lin_in = Linear::new(&mut pb.pp("lin_in"), 2 * features, token_dim)?;
        let style = if style_token {
            Some(pb.get("style_token", &[token_dim], Init::Normal(0.02))?)
        } else {
            None
        };
        let blocks = (0..n_blocks)
            .map(|i| Block::new(&mut pb.pp(format!("blocks.{i}")), token_dim, n_heads, mlp_ratio))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            shape,
            pos_embed,
            lin_in,
            style,
            blocks,
            ln_out: LayerNorm::new(&mut pb.pp("ln_out"), token_dim)?,
            lin_out: Linear::new(&mut pb.pp("lin_out"), token_dim, features)?,
        })
    }

    pub fn shape(&self) -> VitShape {
        self.shape
    }

    /// `tokens` is `[B, N, features]`. Returns transformed tokens of the same
    /// shape and, if enabled, the final style token `[B, token_dim]`.
    pub fn forward(&self, tokens: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let (b, n, f) = tokens.dims3()?;
        if n != self.shape.n_tokens || f != self.shape.features {
            return Err(shape_err!(
                "bottleneck has {n} tokens of width {f}, expected {} of width {}",
                self.shape.n_tokens,
                self.shape.features
            ));
        }
        let pos = self.pos_embed.unsqueeze(0)?.broadcast_as((b, n, f))?;
        let mut xs = self.lin_in.forward(&Tensor::cat(&[tokens, &pos], D::Minus1)?)?;
        if let Some(s) = &self.style {
            let s = s.reshape((1, 1, ()))?.broadcast_as((b, 1, self.shape.token_dim))?;
            xs = Tensor::cat(&[&xs, &s], 1)?;
        }
        for block in &self.blocks {
            xs = block.forward(&xs)?;
        }
        let xs = self.ln_out.forward(&xs)?;
        let body = xs.narrow(1, 0, n)?;
        let style_out = match self.style {
            Some(_) => Some(xs.narrow(1, n, 1)?.squeeze(1)?),
            None => None,
        };
        Ok((self.lin_out.forward(&body)?, style_out))
    }
}
