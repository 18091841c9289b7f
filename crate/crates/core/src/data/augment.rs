//! Geometric and photometric transforms on RGB images with values in `[0, 1]`.

use image::imageops::{self, FilterType};
use image::{Rgb, Rgb32FImage};
use rand::Rng;

use crate::error::{shape_err, Result};

/// Scales so the smaller side equals `target`, keeping the aspect ratio
/// (the other side is rounded down).
pub fn resize_smaller_side(img: &Rgb32FImage, target: u32, filter: FilterType) -> Rgb32FImage {
    let (w, h) = img.dimensions();
    let (nw, nh) = if w <= h {
        (target, (h as u64 * target as u64 / w as u64) as u32)
    } else {
        ((w as u64 * target as u64 / h as u64) as u32, target)
    };
    if (nw, nh) == (w, h) {
        return img.clone();
    }
    imageops::resize(img, nw, nh, filter)
}

pub fn resize_exact(img: &Rgb32FImage, w: u32, h: u32, filter: FilterType) -> Rgb32FImage {
    if img.dimensions() == (w, h) {
        return img.clone();
    }
    imageops::resize(img, w, h, filter)
}

fn crop_at(img: &Rgb32FImage, x: u32, y: u32, size: u32) -> Rgb32FImage {
    imageops::crop_imm(img, x, y, size, size).to_image()
}

pub fn center_crop(img: &Rgb32FImage, size: u32) -> Result<Rgb32FImage> {
    let (w, h) = img.dimensions();
    if w < size || h < size {
        return Err(shape_err!("cannot crop {size}x{size} from {w}x{h}"));
    }
    Ok(crop_at(img, (w - size) / 2, (h - size) / 2, size))
}

pub fn random_crop(img: &Rgb32FImage, size: u32, rng: &mut impl Rng) -> Result<Rgb32FImage> {
    let (w, h) = img.dimensions();
    if w < size || h < size {
        return Err(shape_err!("cannot crop {size}x{size} from {w}x{h}"));
    }
    let x = rng.random_range(0..=w - size);
    let y = rng.random_range(0..=h - size);
    Ok(crop_at(img, x, y, size))
}

pub fn hflip(img: &Rgb32FImage) -> Rgb32FImage {
    imageops::flip_horizontal(img)
}

/// Rotates about the image center by `degrees` (counter-clockwise), bilinear
/// sampling, black outside the source.
pub fn rotate(img: &Rgb32FImage, degrees: f32) -> Rgb32FImage {
    let (w, h) = img.dimensions();
    let (cx, cy) = ((w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0);
    let (s, c) = degrees.to_radians().sin_cos();
    let sample = |x: f32, y: f32| -> [f32; 3] {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let mut acc = [0f32; 3];
        for (dx, dy, wgt) in [
            (0, 0, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ] {
            let (xi, yi) = (x0 as i64 + dx, y0 as i64 + dy);
            if wgt == 0.0 || xi < 0 || yi < 0 || xi >= w as i64 || yi >= h as i64 {
                continue;
            }
            let p = img.get_pixel(xi as u32, yi as u32).0;
            for k in 0..3 {
                acc[k] += wgt * p[k];
            }
        }
        acc
    };
    Rgb32FImage::from_fn(w, h, |x, y| {
        // inverse map: output pixel -> source position
        let (dx, dy) = (x as f32 - cx, y as f32 - cy);
        let sx = c * dx - s * dy + cx;
        let sy = s * dx + c * dy + cy;
        Rgb(sample(sx, sy))
    })
}

fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as i32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn gray(p: [f32; 3]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

/// Random brightness, contrast, saturation and hue changes, each of strength
/// `s` (factors in `[1 - s, 1 + s]`, hue shift in `[-s, s]` turns).
pub fn color_jitter(img: &Rgb32FImage, s: f32, rng: &mut impl Rng) -> Rgb32FImage {
    if s <= 0.0 {
        return img.clone();
    }
    let lo = (1.0 - s).max(0.0);
    let brightness: f32 = rng.random_range(lo..=1.0 + s);
    let contrast: f32 = rng.random_range(lo..=1.0 + s);
    let saturation: f32 = rng.random_range(lo..=1.0 + s);
    let hue: f32 = rng.random_range(-s..=s);
    let n = (img.width() * img.height()).max(1) as f32;
    let mean_gray = img.pixels().map(|p| gray(p.0)).sum::<f32>() * brightness / n;
    let mut out = img.clone();
    for p in out.pixels_mut() {
        let mut v = p.0.map(|x| (x * brightness).clamp(0.0, 1.0));
        v = v.map(|x| ((x - mean_gray) * contrast + mean_gray).clamp(0.0, 1.0));
        let g = gray(v);
        v = v.map(|x| ((x - g) * saturation + g).clamp(0.0, 1.0));
        let mut hsv = rgb_to_hsv(v);
        hsv[0] += hue;
        p.0 = hsv_to_rgb(hsv).map(|x| x.clamp(0.0, 1.0));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: u32, h: u32, seed: u64) -> Rgb32FImage {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Rgb32FImage::from_fn(w, h, |_, _| Rgb([r.random(), r.random(), r.random()]))
    }

    #[test]
    fn smaller_side_rule() {
        let img = random_image(178, 218, 0);
        let r = resize_smaller_side(&img, 256, FilterType::Triangle);
        assert_eq!(r.dimensions(), (256, 313));
        let sq = random_image(256, 256, 0);
        assert_eq!(resize_smaller_side(&sq, 286, FilterType::Triangle).dimensions(), (286, 286));
        assert_eq!(center_crop(&r, 256).unwrap().dimensions(), (256, 256));
    }

    #[test]
    fn zero_rotation_is_identity() {
        let img = random_image(9, 7, 1);
        let r = rotate(&img, 0.0);
        for (a, b) in img.pixels().zip(r.pixels()) {
            for k in 0..3 {
                assert!((a.0[k] - b.0[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn hsv_round_trip() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let p: [f32; 3] = [r.random(), r.random(), r.random()];
            let q = hsv_to_rgb(rgb_to_hsv(p));
            for k in 0..3 {
                assert!((p[k] - q[k]).abs() < 1e-5, "{p:?} {q:?}");
            }
        }
    }

    #[test]
    fn transforms_keep_range() {
        let img = random_image(16, 16, 3);
        let mut r = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let out = rotate(&color_jitter(&img, 0.2, &mut r), r.random_range(-10.0..10.0));
            assert!(out.as_raw().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(random_crop(&img, 17, &mut r).is_err());
    }
}
