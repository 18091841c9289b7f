//! Spectral normalization: divide a weight by its largest singular value,
//! estimated by power iteration with vectors persisted across calls.

use candle_core::{Tensor, Var};

use super::Conv2d;
use crate::error::Result;
use crate::params::{assign, Init, ParamBuilder};

const NORM_EPS: f64 = 1e-12;

fn normalize(x: &Tensor) -> Result<Tensor> {
    let n = x.sqr()?.sum_all()?.sqrt()?;
    Ok(x.broadcast_div(&(n + NORM_EPS)?)?)
}

/// Left/right singular vector estimates of a weight viewed as `[out, rest]`.
#[derive(Debug, Clone)]
pub struct PowerIteration {
    pub u: Tensor,
    pub v: Tensor,
}

impl PowerIteration {
    pub fn new(u: Tensor, v: Tensor) -> Result<Self> {
        Ok(Self {
            u: normalize(&u)?,
            v: normalize(&v)?,
        })
    }

    /// One power-iteration step on `w_mat` (no gradient is recorded).
    pub fn step(&mut self, w_mat: &Tensor) -> Result<()> {
        let w = w_mat.detach();
        let v = w.t()?.matmul(&self.u.unsqueeze(1)?)?.squeeze(1)?;
        self.v = normalize(&v)?;
        let u = w.matmul(&self.v.unsqueeze(1)?)?.squeeze(1)?;
        self.u = normalize(&u)?;
        Ok(())
    }

    /// `u^T W v`, differentiable in `W` only.
    pub fn sigma(&self, w_mat: &Tensor) -> Result<Tensor> {
        let u = self.u.detach().unsqueeze(0)?;
        let v = self.v.detach().unsqueeze(1)?;
        Ok(u.matmul(&w_mat.matmul(&v)?)?.reshape(())?)
    }
}

/// Runs `n_iters` power-iteration steps, then returns `weight / sigma`.
pub fn spectral_normalize(
    weight: &Tensor,
    state: &mut PowerIteration,
    n_iters: usize,
) -> Result<Tensor> {
    let out = weight.dim(0)?;
    let w_mat = weight.reshape((out, ()))?;
    for _ in 0..n_iters {
        state.step(&w_mat)?;
    }
    let sigma = state.sigma(&w_mat)?;
    Ok(weight.broadcast_div(&sigma)?)
}

/// Convolution whose weight is spectrally normalized on every forward pass.
///
/// The power-iteration vectors live in the parameter store as buffers; they are
/// advanced only by [`SpectralConv2d::power_iterate`], so several forward passes
/// within one optimization step see the same normalization.
#[derive(Debug, Clone)]
pub struct SpectralConv2d {
    conv: Conv2d,
    u: Option<Var>,
    v: Option<Var>,
}

impl SpectralConv2d {
    pub fn new(
        pb: &mut ParamBuilder,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        spectral: bool,
    ) -> Result<Self> {
        let conv = Conv2d::new(pb, in_ch, out_ch, kernel, stride, true)?;
        let (u, v) = if spectral {
            let rest = in_ch * kernel * kernel;
            let u = pb.buffer_var("sn_u", &[out_ch], Init::Normal(1.0))?;
            let v = pb.buffer_var("sn_v", &[rest], Init::Normal(1.0))?;
            assign(&u, &normalize(u.as_tensor())?)?;
            assign(&v, &normalize(v.as_tensor())?)?;
            (Some(u), Some(v))
        } else {
            (None, None)
        };
        Ok(Self { conv, u, v })
    }

    pub fn is_spectral(&self) -> bool {
        self.u.is_some()
    }

    pub fn raw_weight(&self) -> &Tensor {
        &self.conv.weight
    }

    fn state(&self) -> Option<PowerIteration> {
        match (&self.u, &self.v) {
            (Some(u), Some(v)) => Some(PowerIteration {
                u: u.as_tensor().clone(),
                v: v.as_tensor().clone(),
            }),
            _ => None,
        }
    }

    pub fn power_iterate(&self) -> Result<()> {
        if let (Some(mut st), Some(u), Some(v)) = (self.state(), &self.u, &self.v) {
            let out = self.conv.weight.dim(0)?;
            st.step(&self.conv.weight.reshape((out, ()))?)?;
            assign(u, &st.u)?;
            assign(v, &st.v)?;
        }
        Ok(())
    }

    pub fn weight(&self) -> Result<Tensor> {
        match self.state() {
            Some(mut st) => spectral_normalize(&self.conv.weight, &mut st, 0),
            None => Ok(self.conv.weight.clone()),
        }
    }

    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let w = self.weight()?;
        self.conv.forward_with(xs, &w)
    }
}
