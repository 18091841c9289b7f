//! Per-image similarity between source images and their translations.

use crate::error::{shape_err, Error, Result};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const PEAK: f64 = 255.0;

/// Planar image `[C, H, W]` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Planar {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Planar {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(shape_err!(
                "{} values for a {channels}x{height}x{width} image",
                data.len()
            ));
        }
        Ok(Self { channels, height, width, data })
    }

    fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    fn same_shape(&self, other: &Planar) -> Result<()> {
        if (self.channels, self.height, self.width) != (other.channels, other.height, other.width) {
            return Err(shape_err!(
                "images differ in shape: {}x{}x{} vs {}x{}x{}",
                self.channels,
                self.height,
                self.width,
                other.channels,
                other.height,
                other.width
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelMetrics {
    /// Root-mean-square difference on the 0-255 scale.
    pub l2: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// RMS difference on the 0-255 scale.
pub fn pixel_l2(a: &Planar, b: &Planar) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.data.len().max(1) as f64;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| ((x - y) * PEAK).powi(2)).sum::<f64>() / n;
    Ok(mse.sqrt())
}

/// `20 log10(255 / rms)`, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_l2(l2: f64) -> f64 {
    if l2 <= 0.0 {
        return PSNR_CAP_DB;
    }
    (20.0 * (PEAK / l2).log10()).min(PSNR_CAP_DB)
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h x w` plane with the SSIM window.
fn filter_valid(p: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..k).map(|i| g[i] * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM (Gaussian 11x11 window, sigma 1.5, valid region), averaged over channels.
pub fn ssim(a: &Planar, b: &Planar) -> Result<f64> {
    a.same_shape(b)?;
    let (h, w) = (a.height, a.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let mut total = 0.0;
    for c in 0..a.channels {
        let x: Vec<f64> = a.plane(c).iter().map(|v| v * PEAK).collect();
        let y: Vec<f64> = b.plane(c).iter().map(|v| v * PEAK).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<f64>>();
        let mx = filter_valid(&x, h, w, &g);
        let my = filter_valid(&y, h, w, &g);
        let sxx = filter_valid(&prod(&x, &x), h, w, &g);
        let syy = filter_valid(&prod(&y, &y), h, w, &g);
        let sxy = filter_valid(&prod(&x, &y), h, w, &g);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / a.channels as f64)
}

pub fn pixel_metrics(a: &Planar, b: &Planar) -> Result<PixelMetrics> {
    let l2 = pixel_l2(a, b)?;
    let ssim = if a == b { 1.0 } else { ssim(a, b)? };
    Ok(PixelMetrics { l2, psnr: psnr_from_l2(l2), ssim })
}

pub type Landmark = [f64; 3];

/// Mean Euclidean distance between corresponding landmarks.
pub fn lm_l2(a: &[Landmark], b: &[Landmark]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "landmark sets must be non-empty and equal in size ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
        .sum();
    Ok(s / a.len() as f64)
}

/// Mean L2 distance between paired feature vectors.
pub fn mean_pair_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidArgument("feature lists must be non-empty and paired".into()));
    }
    let mut s = 0.0;
    for (u, v) in a.iter().zip(b) {
        if u.len() != v.len() {
            return Err(shape_err!("feature dims differ: {} vs {}", u.len(), v.len()));
        }
        s += u.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    }
    Ok(s / a.len() as f64)
}

/// Mean of `distance(k, k + 1)` over consecutive items.
pub fn diversity<T>(items: &[T], distance: impl Fn(&T, &T) -> Result<f64>) -> Result<f64> {
    if items.len() < 2 {
        return Err(Error::InvalidArgument("diversity needs at least two images".into()));
    }
    let mut s = 0.0;
    for w in items.windows(2) {
        s += distance(&w[0], &w[1])?;
    }
    Ok(s / (items.len() - 1) as f64)
}
