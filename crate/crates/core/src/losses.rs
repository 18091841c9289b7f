//! Adversarial, reconstruction, consistency and gradient-penalty objectives.

use std::fmt;
use std::str::FromStr;

use candle_core::{Tensor, Var};

use crate::discriminator::{CacheBank, CacheSlot, Discriminator};
use crate::error::{shape_err, Error, Result};
use crate::nn::ops::{area_downsample, l1, mse_to};
use crate::runtime;

/// Default side length of the consistency low-pass.
pub const CONSIST_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpForm {
    /// `(lambda/2) * E ||grad_x D(x)||^2` on real samples.
    R1,
    /// `lambda * E (||grad D(x_hat)|| - gamma)^2 / gamma^2` on real/fake interpolates.
    Legacy,
}

impl fmt::Display for GpForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GpForm::R1 => "r1",
            GpForm::Legacy => "legacy",
        })
    }
}

impl FromStr for GpForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "r1" => Ok(GpForm::R1),
            "legacy" => Ok(GpForm::Legacy),
            _ => Err(Error::Config(format!("unknown gradient penalty {s:?} (r1, legacy)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_cyc: f64,
    pub lambda_idt: f64,
    pub lambda_consist: f64,
    pub lambda_gp: f64,
    pub gp_form: GpForm,
    /// Target gradient norm of the legacy penalty.
    pub legacy_gp_gamma: f64,
    /// Side length of the consistency low-pass.
    pub consist_size: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cyc: 5.0,
            lambda_idt: 0.0,
            lambda_consist: 0.0,
            lambda_gp: 0.01,
            gp_form: GpForm::R1,
            legacy_gp_gamma: 100.0,
            consist_size: CONSIST_SIZE,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_cyc,
            self.lambda_idt,
            self.lambda_consist,
            self.lambda_gp,
            self.legacy_gp_gamma,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {all:?}")));
        }
        if self.consist_size == 0 {
            return Err(Error::Config("consistency size must be positive".into()));
        }
        Ok(())
    }
}

/// Least-squares GAN loss `mean((pred - label)^2)` with `label` 0 (fake) or 1 (real).
pub fn gan_loss(pred: &Tensor, label: f64) -> Result<Tensor> {
    if label != 0.0 && label != 1.0 {
        return Err(Error::InvalidArgument(format!("gan label must be 0 or 1, got {label}")));
    }
    mse_to(pred, label)
}

/// `gan(D(fake), 0) + gan(D(real), 1)` from precomputed score maps.
pub fn disc_loss_from_scores(score_real: &Tensor, score_fake: &Tensor) -> Result<Tensor> {
    Ok((gan_loss(score_fake, 0.0)? + gan_loss(score_real, 1.0)?)?)
}

/// Discriminator loss for one domain, scoring against the matching caches.
/// The caches are not modified.
pub fn disc_loss(
    d: &Discriminator,
    real: &Tensor,
    fake: &Tensor,
    bank: &CacheBank,
    real_slot: CacheSlot,
    fake_slot: CacheSlot,
) -> Result<Tensor> {
    let (sr, _) = d.score(real, bank.get(real_slot))?;
    let (sf, _) = d.score(&fake.detach(), bank.get(fake_slot))?;
    disc_loss_from_scores(&sr, &sf)
}

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(shape_err!("loss inputs differ in shape: {:?} vs {:?}", a.dims(), b.dims()));
    }
    Ok(())
}

pub fn cycle_loss(a: &Tensor, a_cyc: &Tensor) -> Result<Tensor> {
    check_same(a, a_cyc)?;
    l1(a, a_cyc)
}

pub fn identity_loss(a: &Tensor, a_idt: &Tensor) -> Result<Tensor> {
    check_same(a, a_idt)?;
    l1(a, a_idt)
}

/// L1 between area-averaged `size x size` versions of the two images.
pub fn consistency_loss(a: &Tensor, b_fake: &Tensor, size: usize) -> Result<Tensor> {
    check_same(a, b_fake)?;
    l1(&area_downsample(a, size)?, &area_downsample(b_fake, size)?)
}

/// Gradient of `sum(f(x))` with respect to `x`, kept differentiable.
fn input_gradient(f: &dyn Fn(&Tensor) -> Result<Tensor>, x: &Tensor) -> Result<Tensor> {
    if !runtime::second_order_enabled() {
        return Err(Error::InvalidArgument(format!(
            "gradient penalties need second-order gradients; set {}=1 before the first backward pass",
            runtime::SECOND_ORDER_ENV
        )));
    }
    let var = Var::from_tensor(&x.detach())?;
    let out = f(var.as_tensor())?;
    let grads = out.sum_all()?.backward()?;
    match grads.get(var.as_tensor()) {
        Some(g) => Ok(g.clone()),
        None => Ok(var.as_tensor().zeros_like()?),
    }
}

fn per_sample_sq_norm(g: &Tensor) -> Result<Tensor> {
    let n = g.dim(0)?;
    Ok(g.reshape((n, ()))?.sqr()?.sum(1)?)
}

/// R1 penalty `(lambda/2) * mean_n ||grad_x f(x_n)||^2`, differentiable in the
/// parameters of `f`.
pub fn r1_penalty(f: &dyn Fn(&Tensor) -> Result<Tensor>, real: &Tensor, lambda: f64) -> Result<Tensor> {
    let g = input_gradient(f, real)?;
    Ok((per_sample_sq_norm(&g)?.mean_all()? * (lambda / 2.0))?)
}

/// Legacy penalty `lambda * mean_n (||g_n|| - gamma)^2 / gamma^2` at `x`
/// (`lambda * mean_n ||g_n||^2` when `gamma == 0`).
pub fn legacy_penalty(
    f: &dyn Fn(&Tensor) -> Result<Tensor>,
    x: &Tensor,
    lambda: f64,
    gamma: f64,
) -> Result<Tensor> {
    let sq = per_sample_sq_norm(&input_gradient(f, x)?)?;
    if gamma == 0.0 {
        return Ok((sq.mean_all()? * lambda)?);
    }
    let norm = (sq + 1e-12)?.sqrt()?;
    Ok(((norm - gamma)?.sqr()?.mean_all()? * (lambda / (gamma * gamma)))?)
}

/// Per-sample interpolation `alpha * real + (1 - alpha) * fake`.
pub fn interpolate(real: &Tensor, fake: &Tensor, alpha: &[f64]) -> Result<Tensor> {
    check_same(real, fake)?;
    let n = real.dim(0)?;
    if alpha.len() != n {
        return Err(shape_err!("{} interpolation weights for a batch of {n}", alpha.len()));
    }
    let a = Tensor::new(alpha, real.device())?
        .to_dtype(real.dtype())?
        .reshape((n, 1, 1, 1))?;
    let one_minus = (1.0 - &a)?;
    Ok((real.detach().broadcast_mul(&a)? + fake.detach().broadcast_mul(&one_minus)?)?)
}

/// Gradient penalty of `d` scored against the cache in `slot`.
pub fn gradient_penalty(
    d: &Discriminator,
    real: &Tensor,
    bank: &CacheBank,
    slot: CacheSlot,
    lambda: f64,
) -> Result<Tensor> {
    let cache = bank.get(slot);
    r1_penalty(&|x| Ok(d.score(x, cache)?.0), real, lambda)
}

/// Per-term generator losses; optional terms count as zero.
#[derive(Debug, Clone)]
pub struct GeneratorLossParts {
    pub gan_a: Tensor,
    pub gan_b: Tensor,
    pub cyc_a: Tensor,
    pub cyc_b: Tensor,
    pub idt_a: Option<Tensor>,
    pub idt_b: Option<Tensor>,
    pub consist_a: Option<Tensor>,
    pub consist_b: Option<Tensor>,
}

/// `(gan_a + gan_b) + lc (cyc_a + cyc_b) + li (idt_a + idt_b) + lk (consist_a + consist_b)`.
pub fn total_generator_loss(p: &GeneratorLossParts, w: &LossWeights) -> Result<Tensor> {
    let mut total = (&p.gan_a + &p.gan_b)?;
    total = (total + ((&p.cyc_a + &p.cyc_b)? * w.lambda_cyc)?)?;
    for (lambda, x, y) in [
        (w.lambda_idt, &p.idt_a, &p.idt_b),
        (w.lambda_consist, &p.consist_a, &p.consist_b),
    ] {
        for t in [x, y].into_iter().flatten() {
            total = (total + (t * lambda)?)?;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops::scalar;
    use candle_core::Device;

    fn full(v: f64, shape: (usize, usize, usize, usize)) -> Tensor {
        Tensor::full(v, shape, &Device::Cpu).unwrap()
    }

    fn s(v: f64) -> Tensor {
        Tensor::new(v, &Device::Cpu).unwrap()
    }

    #[test]
    fn gan_loss_examples() {
        let p = (1, 1, 2, 2);
        assert_eq!(scalar(&gan_loss(&full(1.0, p), 1.0).unwrap()).unwrap(), 0.0);
        assert_eq!(scalar(&gan_loss(&full(0.5, p), 0.0).unwrap()).unwrap(), 0.25);
        assert_eq!(scalar(&gan_loss(&full(0.0, p), 1.0).unwrap()).unwrap(), 1.0);
        assert!(gan_loss(&full(0.0, p), 0.5).is_err());
    }

    #[test]
    fn disc_loss_examples() {
        let p = (1, 1, 2, 2);
        let oracle = disc_loss_from_scores(&full(1.0, p), &full(0.0, p)).unwrap();
        assert_eq!(scalar(&oracle).unwrap(), 0.0);
        let flat = disc_loss_from_scores(&full(0.5, p), &full(0.5, p)).unwrap();
        assert_eq!(scalar(&flat).unwrap(), 0.5);
    }

    #[test]
    fn reconstruction_losses() {
        let p = (1, 3, 4, 4);
        let a = full(0.0, p);
        let b = full(0.5, p);
        assert_eq!(scalar(&cycle_loss(&a, &a).unwrap()).unwrap(), 0.0);
        assert_eq!(scalar(&cycle_loss(&a, &b).unwrap()).unwrap(), 0.5);
        assert_eq!(
            scalar(&identity_loss(&a, &b).unwrap()).unwrap(),
            scalar(&identity_loss(&b, &a).unwrap()).unwrap()
        );
        assert!(cycle_loss(&a, &full(0.0, (1, 3, 4, 2))).is_err());
    }

    #[test]
    fn consistency_rejects_high_frequencies() {
        let p = (1, 3, 8, 8);
        let a = full(0.0, p);
        assert_eq!(scalar(&consistency_loss(&a, &a, 4).unwrap()).unwrap(), 0.0);
        assert!((scalar(&consistency_loss(&a, &full(-0.3, p), 4).unwrap()).unwrap() - 0.3).abs() < 1e-12);
        // 2x2 checkerboard tiles of +-0.25 average out inside each 2x2 pooling cell
        let mut v = vec![0f64; 3 * 64];
        for c in 0..3 {
            for y in 0..8 {
                for x in 0..8 {
                    v[c * 64 + y * 8 + x] = if (x + y) % 2 == 0 { 0.25 } else { -0.25 };
                }
            }
        }
        let board = Tensor::from_vec(v, p, &Device::Cpu).unwrap();
        let base = Tensor::rand(-1f64, 1.0, p, &Device::Cpu).unwrap();
        let noisy = (&base + &board).unwrap();
        let other = Tensor::rand(-1f64, 1.0, p, &Device::Cpu).unwrap();
        let clean = scalar(&consistency_loss(&base, &other, 4).unwrap()).unwrap();
        let with = scalar(&consistency_loss(&noisy, &other, 4).unwrap()).unwrap();
        assert!((clean - with).abs() < 1e-12, "{clean} vs {with}");
    }

    #[test]
    fn total_loss_arithmetic_and_linearity() {
        let mut w = LossWeights {
            lambda_cyc: 5.0,
            lambda_idt: 0.0,
            lambda_consist: 0.0,
            ..Default::default()
        };
        let parts = GeneratorLossParts {
            gan_a: s(0.2),
            gan_b: s(0.2),
            cyc_a: s(0.1),
            cyc_b: s(0.3),
            idt_a: Some(s(0.7)),
            idt_b: None,
            consist_a: Some(s(0.05)),
            consist_b: Some(s(0.15)),
        };
        let t = scalar(&total_generator_loss(&parts, &w).unwrap()).unwrap();
        assert!((t - 2.4).abs() < 1e-12, "{t}");
        w.lambda_cyc = 10.0;
        let t2 = scalar(&total_generator_loss(&parts, &w).unwrap()).unwrap();
        assert!(((t2 - 0.4) - 2.0 * (t - 0.4)).abs() < 1e-12);
        w.lambda_cyc = 0.0;
        w.lambda_idt = 2.0;
        w.lambda_consist = 3.0;
        let t3 = scalar(&total_generator_loss(&parts, &w).unwrap()).unwrap();
        assert!((t3 - (0.4 + 1.4 + 0.6)).abs() < 1e-12);
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        let bad = LossWeights { lambda_cyc: -1.0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn interpolation_endpoints() {
        let p = (2, 1, 2, 2);
        let r = full(1.0, p);
        let f = full(-1.0, p);
        let x = interpolate(&r, &f, &[1.0, 0.25]).unwrap();
        let v = crate::nn::ops::to_vec_f64(&x).unwrap();
        assert!(v[..4].iter().all(|&t| t == 1.0));
        assert!(v[4..].iter().all(|&t| t == -0.5));
    }

    fn linear_d(a: &Tensor) -> impl Fn(&Tensor) -> Result<Tensor> + '_ {
        move |x: &Tensor| {
            let n = x.dim(0)?;
            Ok(x.reshape((n, ()))?.broadcast_mul(a)?.sum(1)?)
        }
    }

    #[test]
    fn r1_on_linear_map_is_exact() {
        crate::runtime::init();
        let a = Tensor::new(&[0.5f64, -1.0, 2.0, 0.25], &Device::Cpu).unwrap();
        let x = Tensor::rand(-1f64, 1.0, (3, 1, 2, 2), &Device::Cpu).unwrap();
        let p = scalar(&r1_penalty(&linear_d(&a), &x, 0.2).unwrap()).unwrap();
        let expect = 0.1 * (0.25 + 1.0 + 4.0 + 0.0625);
        assert!((p - expect).abs() < 1e-12, "{p} vs {expect}");
        let c = scalar(&r1_penalty(&|x: &Tensor| Ok(((x.sum_all()? * 0.0)? + 3.0)?), &x, 0.2).unwrap()).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn legacy_with_zero_gamma_matches_r1() {
        crate::runtime::init();
        let a = Tensor::new(&[1.5f64, -0.5, 0.0, 1.0], &Device::Cpu).unwrap();
        let x = Tensor::rand(-1f64, 1.0, (2, 1, 2, 2), &Device::Cpu).unwrap();
        let r1 = scalar(&r1_penalty(&linear_d(&a), &x, 0.3).unwrap()).unwrap();
        let legacy = scalar(&legacy_penalty(&linear_d(&a), &x, 0.15, 0.0).unwrap()).unwrap();
        assert!((r1 - legacy).abs() < 1e-12);
        // gamma form: ||a|| = sqrt(3.5); penalty = (sqrt(3.5) - 1)^2 / 1
        let g = scalar(&legacy_penalty(&linear_d(&a), &x, 1.0, 1.0).unwrap()).unwrap();
        assert!((g - (3.5f64.sqrt() - 1.0).powi(2)).abs() < 1e-9);
    }
}
