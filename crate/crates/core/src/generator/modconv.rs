//! Style modulation and demodulation of convolution weights.
//!
//! Weights are laid out `[out, in, kh, kw]`; a style vector has one entry per
//! input channel.

use candle_core::{Tensor, D};

use crate::error::{shape_err, Result};
use crate::nn::ops::conv2d;
use crate::params::{Init, ParamBuilder};

/// Default `epsilon` of the demodulation denominator.
pub const DEMOD_EPS: f64 = 1e-8;

/// Scales every input-channel slice of `w` by the matching style entry:
/// `w'[j, i, x, y] = s[i] * w[j, i, x, y]`.
pub fn modulate(w: &Tensor, s: &Tensor) -> Result<Tensor> {
    let (_, in_ch, _, _) = w.dims4()?;
    if s.dims() != [in_ch] {
        return Err(shape_err!(
            "style of shape {:?} cannot modulate weights with {in_ch} input channels",
            s.dims()
        ));
    }
    Ok(w.broadcast_mul(&s.reshape((1, in_ch, 1, 1))?)?)
}

/// Renormalizes each output channel of `w_prime` to (almost) unit L2 norm:
/// `w'' = w' / sqrt(sum_{i,x,y} w'^2 + eps)`.
pub fn demodulate(w_prime: &Tensor, eps: f64) -> Result<Tensor> {
    if eps <= 0.0 {
        return Err(crate::Error::InvalidArgument(format!(
            "demodulation epsilon must be positive, got {eps}"
        )));
    }
    let (out, _, _, _) = w_prime.dims4()?;
    let sq = w_prime.sqr()?.reshape((out, ()))?.sum(1)?;
    let denom = (sq + eps)?.sqrt()?.reshape((out, 1, 1, 1))?;
    Ok(w_prime.broadcast_div(&denom)?)
}

/// Convolves each sample with its own demodulated, modulated kernel.
///
/// `styles` is `[B, in]`. The result equals `conv(x_b, demodulate(modulate(w, s_b)))`
/// for every sample `b`; it is computed by scaling the input channels, running
/// one shared convolution and rescaling each output channel.
pub fn modulated_conv(xs: &Tensor, w: &Tensor, styles: &Tensor, eps: f64) -> Result<Tensor> {
    let (b, c, _, _) = xs.dims4()?;
    let (out, in_ch, kh, kw) = w.dims4()?;
    if c != in_ch {
        return Err(shape_err!("input has {c} channels, kernel expects {in_ch}"));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(shape_err!("kernel {kh}x{kw} is not odd"));
    }
    if styles.dims() != [b, in_ch] {
        return Err(shape_err!(
            "styles {:?} do not match batch {b} x {in_ch} channels",
            styles.dims()
        ));
    }
    let scaled = xs.broadcast_mul(&styles.reshape((b, in_ch, 1, 1))?)?;
    let ys = conv2d(&scaled, w, kh / 2, 1)?;
    // sum_{i,x,y} (s_i w_jixy)^2 = sum_i s_i^2 * sum_{x,y} w_jixy^2
    let w_sq = w.sqr()?.sum(D::Minus1)?.sum(D::Minus1)?; // [out, in]
    let energy = styles.sqr()?.matmul(&w_sq.t()?)?; // [B, out]
    let demod = (energy + eps)?.sqrt()?.recip()?;
    Ok(ys.broadcast_mul(&demod.reshape((b, out, 1, 1))?)?)
}

/// Modulated convolution layer with a bias added after demodulation.
#[derive(Debug, Clone)]
pub struct ModulatedConv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub eps: f64,
}

impl ModulatedConv2d {
    pub fn new(
        pb: &mut ParamBuilder,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        eps: f64,
    ) -> Result<Self> {
        // demodulation fixes the scale, so unit-normal weights are fine
        let weight = pb.get("weight", &[out_ch, in_ch, kernel, kernel], Init::Normal(1.0))?;
        let bias = pb.get("bias", &[out_ch], Init::Const(0.0))?;
        Ok(Self { weight, bias, eps })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn forward(&self, xs: &Tensor, styles: &Tensor) -> Result<Tensor> {
        let ys = modulated_conv(xs, &self.weight, styles, self.eps)?;
        Ok(ys.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, IndexOp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let v: Vec<f32> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn modulate_hand_example() {
        let w = Tensor::ones((2, 3, 1, 1), DType::F32, &Device::Cpu).unwrap();
        let s = Tensor::new(&[2f32, 1.0, 0.5], &Device::Cpu).unwrap();
        let wp = modulate(&w, &s).unwrap();
        for j in 0..2 {
            let row = wp.i((j, .., 0, 0)).unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(row, vec![2.0, 1.0, 0.5]);
        }
    }

    #[test]
    fn modulate_identity_and_annihilation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = randn(&[4, 3, 3, 3], &mut rng);
        let ones = Tensor::ones(3, DType::F32, &Device::Cpu).unwrap();
        let zeros = Tensor::zeros(3, DType::F32, &Device::Cpu).unwrap();
        let same = modulate(&w, &ones).unwrap();
        assert_eq!(
            same.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            w.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
        let gone = modulate(&w, &zeros).unwrap();
        assert!(gone.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn modulate_rejects_wrong_length() {
        let w = Tensor::ones((2, 3, 1, 1), DType::F32, &Device::Cpu).unwrap();
        let s = Tensor::ones(2, DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(modulate(&w, &s), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn demodulate_three_four_five() {
        let w = Tensor::new(&[3f64, 4.0], &Device::Cpu).unwrap().reshape((1, 2, 1, 1)).unwrap();
        let d = demodulate(&w, 1e-12).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!((d[0] - 0.6).abs() < 1e-12 && (d[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn demodulate_zero_channel_stays_zero() {
        let w = Tensor::zeros((2, 3, 3, 3), DType::F32, &Device::Cpu).unwrap();
        let d = demodulate(&w, DEMOD_EPS).unwrap();
        assert!(d.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().all(|&v| v == 0.0));
        assert!(demodulate(&w, 0.0).is_err());
    }

    #[test]
    fn demodulated_rows_have_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = randn(&[8, 5, 3, 3], &mut rng);
        let d = demodulate(&w, DEMOD_EPS).unwrap();
        let norms = d.sqr().unwrap().reshape((8, ())).unwrap().sum(1).unwrap();
        for n in norms.to_vec1::<f32>().unwrap() {
            assert!((n - 1.0).abs() < 1e-5, "{n}");
        }
    }

    #[test]
    fn modulated_conv_rejects_even_kernels() {
        let x = Tensor::zeros((1, 2, 4, 4), DType::F32, &Device::Cpu).unwrap();
        let w = Tensor::zeros((1, 2, 2, 2), DType::F32, &Device::Cpu).unwrap();
        let s = Tensor::ones((1, 2), DType::F32, &Device::Cpu).unwrap();
        assert!(modulated_conv(&x, &w, &s, DEMOD_EPS).is_err());
    }
}
