use candle_core::Tensor;

use super::ops::{conv2d, layer_norm};
use crate::error::Result;
use crate::params::{Init, ParamBuilder};

/// Same-padding convolution (odd kernels) with optional stride.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(
        pb: &mut ParamBuilder,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    ) -> Result<Self> {
        let init = Init::fan_in(in_ch * kernel * kernel);
        Self::with_init(pb, in_ch, out_ch, kernel, stride, init, bias.then_some(init))
    }

    /// Convolution with explicit weight and optional bias initializers.
    pub fn with_init(
        pb: &mut ParamBuilder,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        weight_init: Init,
        bias_init: Option<Init>,
    ) -> Result<Self> {
        let weight = pb.get("weight", &[out_ch, in_ch, kernel, kernel], weight_init)?;
        let bias = match bias_init {
            Some(init) => Some(pb.get("bias", &[out_ch], init)?),
            None => None,
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding: kernel / 2,
        })
    }

    pub fn forward_with(&self, xs: &Tensor, weight: &Tensor) -> Result<Tensor> {
        let ys = conv2d(xs, weight, self.padding, self.stride)?;
        match &self.bias {
            Some(b) => Ok(ys.broadcast_add(&b.reshape((1, (), 1, 1))?)?),
            None => Ok(ys),
        }
    }

    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        self.forward_with(xs, &self.weight)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder, in_dim: usize, out_dim: usize) -> Result<Self> {
        Self::with_init(pb, in_dim, out_dim, Init::fan_in(in_dim), Init::fan_in(in_dim))
    }

    pub fn with_init(
        pb: &mut ParamBuilder,
        in_dim: usize,
        out_dim: usize,
        weight_init: Init,
        bias_init: Init,
    ) -> Result<Self> {
        let weight = pb.get("weight", &[out_dim, in_dim], weight_init)?;
        let bias = pb.get("bias", &[out_dim], bias_init)?;
        Ok(Self { weight, bias })
    }

    /// Applies the map to the last dimension of `xs`.
    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let ys = xs.broadcast_matmul(&self.weight.t()?)?;
        Ok(ys.broadcast_add(&self.bias)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl LayerNorm {
    pub fn new(pb: &mut ParamBuilder, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: pb.get("gamma", &[dim], Init::Const(1.0))?,
            beta: pb.get("beta", &[dim], Init::Const(0.0))?,
        })
    }

    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        layer_norm(xs, &self.gamma, &self.beta, 1e-5)
    }
}
