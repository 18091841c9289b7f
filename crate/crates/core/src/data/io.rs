//! Image decoding, encoding and conversion to `[C, H, W]` tensors in `[-1, 1]`.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use image::{ImageFormat, Rgb32FImage, RgbImage};

use crate::error::{shape_err, Error, Result};

const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Image files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Missing(dir.to_path_buf()));
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(format!("reading {}", dir.display()), e))? {
        let path = entry.map_err(|e| Error::io("listing directory", e))?.path();
        let ok = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if ok && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Decodes an image as RGB with values in `[0, 1]`.
pub fn load_rgb(path: &Path) -> Result<Rgb32FImage> {
    if !path.is_file() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    Ok(image::open(path)?.to_rgb32f())
}

/// `[3, H, W]` tensor in `[-1, 1]`.
pub fn image_to_tensor(img: &Rgb32FImage) -> Result<Tensor> {
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let raw = img.as_raw();
    let mut chw = vec![0f32; 3 * h * w];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            chw[c * h * w + i] = px[c] * 2.0 - 1.0;
        }
    }
    Ok(Tensor::from_vec(chw, (3, h, w), &Device::Cpu)?)
}

/// Inverse of [`image_to_tensor`]; values are clamped to `[0, 1]`.
pub fn tensor_to_image(t: &Tensor) -> Result<Rgb32FImage> {
    let (c, h, w) = t.dims3()?;
    if c != 3 {
        return Err(shape_err!("expected 3 channels, got {c}"));
    }
    let v = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let mut raw = vec![0f32; 3 * h * w];
    for i in 0..h * w {
        for ch in 0..3 {
            raw[3 * i + ch] = ((v[ch * h * w + i] + 1.0) / 2.0).clamp(0.0, 1.0);
        }
    }
    Ok(Rgb32FImage::from_raw(w as u32, h as u32, raw).expect("buffer size matches"))
}

pub fn to_rgb8(img: &Rgb32FImage) -> RgbImage {
    let (w, h) = img.dimensions();
    let raw = img.as_raw().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    RgbImage::from_raw(w, h, raw).expect("buffer size matches")
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

/// Writes a `[3, H, W]` tensor in `[-1, 1]` as an 8-bit PNG.
pub fn save_tensor_png(t: &Tensor, path: &Path) -> Result<()> {
    let bytes = encode_png(&to_rgb8(&tensor_to_image(t)?))?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
