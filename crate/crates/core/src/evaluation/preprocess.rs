//! Evaluation protocols: how images are resized and normalized before feature extraction.

use std::fmt;
use std::str::FromStr;

use candle_core::{Device, Tensor};
use image::imageops::FilterType;
use image::Rgb32FImage;

use super::faithfulness::Planar;
use crate::data::augment::{center_crop, resize_exact, resize_smaller_side};
use crate::error::{Error, Result};

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolKind {
    /// Smaller side to 256 (Lanczos), center crop.
    LqLegacy,
    /// Resize to 256 and standardize channels with ImageNet statistics.
    HqAdhoc,
    /// Resize to 256, no standardization; test splits only.
    Consistent,
}

impl ProtocolKind {
    pub fn default_kid_subset(self) -> usize {
        match self {
            ProtocolKind::LqLegacy => 1000,
            ProtocolKind::HqAdhoc | ProtocolKind::Consistent => 100,
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProtocolKind::LqLegacy => "lq_legacy",
            ProtocolKind::HqAdhoc => "hq_adhoc",
            ProtocolKind::Consistent => "consistent",
        })
    }
}

impl FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lq_legacy" => Ok(ProtocolKind::LqLegacy),
            "hq_adhoc" => Ok(ProtocolKind::HqAdhoc),
            "consistent" => Ok(ProtocolKind::Consistent),
            _ => Err(Error::Config(format!(
                "unknown protocol {s:?} (lq_legacy, hq_adhoc, consistent)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalProtocol {
    pub kind: ProtocolKind,
    pub image_size: u32,
    pub kid_subset_size: usize,
    pub standardize: Option<([f64; 3], [f64; 3])>,
}

impl EvalProtocol {
    pub fn new(kind: ProtocolKind) -> Self {
        Self {
            kind,
            image_size: 256,
            kid_subset_size: kind.default_kid_subset(),
            standardize: (kind == ProtocolKind::HqAdhoc).then_some((IMAGENET_MEAN, IMAGENET_STD)),
        }
    }

    pub fn with_image_size(mut self, size: u32) -> Self {
        self.image_size = size;
        self
    }

    pub fn with_kid_subset(mut self, n: usize) -> Self {
        self.kid_subset_size = n;
        self
    }
}

/// Geometric part of the protocol: the image at the evaluation resolution, values in `[0, 1]`.
pub fn resize_for_protocol(img: &Rgb32FImage, protocol: &EvalProtocol) -> Result<Rgb32FImage> {
    let s = protocol.image_size;
    match protocol.kind {
        ProtocolKind::LqLegacy => center_crop(&resize_smaller_side(img, s, FilterType::Lanczos3), s),
        ProtocolKind::HqAdhoc | ProtocolKind::Consistent => Ok(resize_exact(img, s, s, FilterType::Lanczos3)),
    }
}

/// Full preprocessing: `[3, S, S]` tensor, standardized if the protocol says so.
pub fn preprocess(img: &Rgb32FImage, protocol: &EvalProtocol) -> Result<Tensor> {
    let p = to_planar(&resize_for_protocol(img, protocol)?);
    let n = p.height * p.width;
    let mut data: Vec<f32> = p.data.iter().map(|&v| v as f32).collect();
    if let Some((mean, std)) = protocol.standardize {
        for c in 0..3 {
            for v in &mut data[c * n..(c + 1) * n] {
                *v = ((*v as f64 - mean[c]) / std[c]) as f32;
            }
        }
    }
    Ok(Tensor::from_vec(data, (3, p.height, p.width), &Device::Cpu)?)
}

pub fn to_planar(img: &Rgb32FImage) -> Planar {
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0f64; 3 * h * w];
    for (i, px) in img.as_raw().chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px[c] as f64;
        }
    }
    Planar {
        channels: 3,
        height: h,
        width: w,
        data,
    }
}
