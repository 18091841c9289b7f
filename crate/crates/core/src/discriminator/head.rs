//! Batch head: a batch statistic over current and cached features, then two 1x1 convs.

use std::fmt;
use std::str::FromStr;

use candle_core::{Tensor, D};

use super::cache::FeatureCache;
use crate::error::{shape_err, Error, Result};
use crate::nn::ops::{leaky_relu, LEAKY_SLOPE};
use crate::nn::Conv2d;
use crate::params::{Init, ParamBuilder};

const VAR_FLOOR: f64 = 1e-8;
const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Batch standard deviation channel.
    Bsd,
    /// Batch normalization with a learnable affine map.
    Bn,
    /// No batch head; a single conv maps body features to scores.
    None,
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Bsd => "bsd",
            HeadKind::Bn => "bn",
            HeadKind::None => "none",
        })
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bsd" => Ok(HeadKind::Bsd),
            "bn" => Ok(HeadKind::Bn),
            "none" => Ok(HeadKind::None),
            _ => Err(Error::Config(format!("unknown batch head {s:?} (bsd, bn, none)"))),
        }
    }
}

/// Reorders each position's values across the batch in ascending order, so any
/// reduction over the batch becomes independent of sample order.
fn sort_over_batch(all: &Tensor) -> Result<Tensor> {
    let n = all.dim(0)?;
    let flat = all.reshape((n, ()))?;
    let idx = flat
        .detach()
        .t()?
        .contiguous()?
        .arg_sort_last_dim(true)?
        .t()?
        .contiguous()?;
    Ok(flat.gather(&idx, 0)?)
}

/// Mean over `(C, H, W)` of the population standard deviation across the batch.
///
/// Returns a scalar tensor; zero for a batch of one. Positions with zero
/// variance contribute exactly zero and have a finite gradient. The result is
/// bit-identical under any permutation of the batch.
pub fn bsd_statistic(all: &Tensor) -> Result<Tensor> {
    let n = all.dim(0)?;
    if n < 2 {
        return Ok(Tensor::zeros((), all.dtype(), all.device())?);
    }
    let all = sort_over_batch(all)?;
    let mean = all.mean_keepdim(0)?;
    let var = all.broadcast_sub(&mean)?.sqr()?.mean(0)?;
    let mask = var.gt(0.0)?.to_dtype(var.dtype())?;
    let std = (var.maximum(VAR_FLOOR)?.sqrt()? * mask)?;
    Ok(std.mean_all()?)
}

/// Appends the batch-stddev channel to every sample of `features` (`[N, C, H, W]`, `N >= 2`).
pub fn batch_stddev(features: &Tensor) -> Result<Tensor> {
    let (n, _, h, w) = features.dims4()?;
    if n < 2 {
        return Err(Error::InvalidArgument(
            "batch standard deviation needs at least two samples".into(),
        ));
    }
    append_stat(features, &bsd_statistic(features)?, n, h, w)
}

fn append_stat(xs: &Tensor, stat: &Tensor, n: usize, h: usize, w: usize) -> Result<Tensor> {
    let chan = stat.reshape((1, 1, 1, 1))?.broadcast_as((n, 1, h, w))?;
    Ok(Tensor::cat(&[xs, &chan], 1)?)
}

/// Concatenates `current` with the cached entries along the batch dimension.
pub fn concat_with_cache(current: &Tensor, cache: &FeatureCache) -> Result<Tensor> {
    let (n, c, h, w) = current.dims4()?;
    if n == 0 {
        return Err(shape_err!("batch head received an empty batch"));
    }
    match cache.stacked()? {
        None => Ok(current.clone()),
        Some(cached) => {
            if cached.dims()[1..] != [c, h, w] {
                return Err(shape_err!(
                    "cached features {:?} do not match current {:?}",
                    &cached.dims()[1..],
                    &[c, h, w]
                ));
            }
            Ok(Tensor::cat(&[current, &cached.to_dtype(current.dtype())?], 0)?)
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchHead {
    kind: HeadKind,
    gamma: Option<Tensor>,
    beta: Option<Tensor>,
    conv1: Conv2d,
    conv2: Option<Conv2d>,
}

impl BatchHead {
    pub fn new(pb: &mut ParamBuilder, kind: HeadKind, channels: usize) -> Result<Self> {
        let (gamma, beta) = if kind == HeadKind::Bn {
            (
                Some(pb.get("bn_gamma", &[channels], Init::Const(1.0))?),
                Some(pb.get("bn_beta", &[channels], Init::Const(0.0))?),
            )
        } else {
            (None, None)
        };
        let (conv1, conv2) = match kind {
            HeadKind::Bsd => (
                Conv2d::new(&mut pb.pp("conv1"), channels + 1, channels, 1, 1, true)?,
                Some(Conv2d::new(&mut pb.pp("conv2"), channels, 1, 1, 1, true)?),
            ),
            HeadKind::Bn => (
                Conv2d::new(&mut pb.pp("conv1"), channels, channels, 1, 1, true)?,
                Some(Conv2d::new(&mut pb.pp("conv2"), channels, 1, 1, 1, true)?),
            ),
            HeadKind::None => (Conv2d::new(&mut pb.pp("conv1"), channels, 1, 3, 1, true)?, None),
        };
        Ok(Self {
            kind,
            gamma,
            beta,
            conv1,
            conv2,
        })
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    /// Scores the current rows; cached rows only shape the batch statistic.
    pub fn forward(&self, current: &Tensor, cache: &FeatureCache) -> Result<Tensor> {
        let (n, c, h, w) = current.dims4()?;
        let x = match self.kind {
            HeadKind::None => return self.conv1.forward(current),
            HeadKind::Bsd => {
                let all = concat_with_cache(current, cache)?;
                append_stat(current, &bsd_statistic(&all)?, n, h, w)?
            }
            HeadKind::Bn => {
                let all = concat_with_cache(current, cache)?;
                let mean = all.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
                let centered = all.broadcast_sub(&mean)?;
                let var = centered.sqr()?.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
                let norm = current
                    .broadcast_sub(&mean)?
                    .broadcast_div(&(var + BN_EPS)?.sqrt()?)?;
                let g = self.gamma.as_ref().expect("bn gamma").reshape((1, c, 1, 1))?;
                let b = self.beta.as_ref().expect("bn beta").reshape((1, c, 1, 1))?;
                norm.broadcast_mul(&g)?.broadcast_add(&b)?
            }
        };
        let x = leaky_relu(&self.conv1.forward(&x)?, LEAKY_SLOPE)?;
        let out = self.conv2.as_ref().expect("second head conv").forward(&x)?;
        debug_assert_eq!(out.dim(D::Minus1)?, w);
        Ok(out)
    }
}
