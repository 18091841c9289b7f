//! Inception-v3 pool features (2048-d) for FID/KID, forward only.
//!
//! Weights are read from a safetensors file using the torchvision parameter
//! names (`Conv2d_1a_3x3.conv.weight`, `Mixed_5b.branch1x1.bn.running_mean`, ...).
//! Inputs are resized to 299x299 (bilinear) and mapped to the `[-1, 1]` range
//! the network was trained on.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, D};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::extractor::FeatureExtractor;
use super::preprocess::{IMAGENET_MEAN, IMAGENET_STD};
use crate::error::{Error, Result};

pub const INCEPTION_SIZE: usize = 299;
pub const INCEPTION_DIM: usize = 2048;
const BN_EPS: f64 = 1e-3;

/// Source of named weights with shape checking.
trait WeightSource {
    fn get(&mut self, name: &str, shape: &[usize]) -> Result<Tensor>;
}

struct MapSource(HashMap<String, Tensor>);

impl WeightSource for MapSource {
    fn get(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let t = self
            .0
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("inception weights lack {name}")))?;
        if t.dims() != shape {
            return Err(Error::Checkpoint(format!(
                "inception weight {name} has shape {:?}, expected {shape:?}",
                t.dims()
            )));
        }
        Ok(t.to_dtype(DType::F32)?)
    }
}

struct RandomSource(ChaCha8Rng);

impl WeightSource for RandomSource {
    fn get(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let v: Vec<f32> = if name.ends_with("running_var") || name.ends_with("bn.weight") {
            vec![1.0; n]
        } else if name.ends_with("running_mean") || name.ends_with("bn.bias") {
            vec![0.0; n]
        } else {
            let fan_in = (n / shape[0]).max(1) as f32;
            let d = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
            (0..n).map(|_| d.sample(&mut self.0)).collect()
        };
        Ok(Tensor::from_vec(v, shape, &Device::Cpu)?)
    }
}

/// Conv without bias, inference batch norm, ReLU.
struct BasicConv {
    weight: Tensor,
    scale: Tensor,
    shift: Tensor,
    stride: usize,
    pad: (usize, usize),
}

impl BasicConv {
    fn new(
        src: &mut dyn WeightSource,
        name: &str,
        cin: usize,
        cout: usize,
        k: (usize, usize),
        stride: usize,
        pad: (usize, usize),
    ) -> Result<Self> {
        let weight = src.get(&format!("{name}.conv.weight"), &[cout, cin, k.0, k.1])?;
        let gamma = src.get(&format!("{name}.bn.weight"), &[cout])?;
        let beta = src.get(&format!("{name}.bn.bias"), &[cout])?;
        let mean = src.get(&format!("{name}.bn.running_mean"), &[cout])?;
        let var = src.get(&format!("{name}.bn.running_var"), &[cout])?;
        let scale = gamma.div(&(var + BN_EPS)?.sqrt()?)?;
        let shift = (beta - mean.mul(&scale)?)?;
        Ok(Self {
            weight,
            scale: scale.reshape((1, cout, 1, 1))?,
            shift: shift.reshape((1, cout, 1, 1))?,
            stride,
            pad,
        })
    }

    fn sq(src: &mut dyn WeightSource, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        Self::new(src, name, cin, cout, (k, k), stride, (pad, pad))
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = x.pad_with_zeros(2, self.pad.0, self.pad.0)?.pad_with_zeros(3, self.pad.1, self.pad.1)?;
        let y = x.conv2d(&self.weight, 0, self.stride, 1, 1)?;
        Ok(y.broadcast_mul(&self.scale)?.broadcast_add(&self.shift)?.relu()?)
    }
}

fn avg_pool_3x3_same(x: &Tensor) -> Result<Tensor> {
    let x = x.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
    Ok(x.avg_pool2d_with_stride(3, 1)?)
}

fn max_pool_3x3_s2(x: &Tensor) -> Result<Tensor> {
    Ok(x.max_pool2d_with_stride(3, 2)?)
}

fn seq(x: &Tensor, convs: &[BasicConv]) -> Result<Tensor> {
    convs.iter().try_fold(x.clone(), |x, c| c.forward(&x))
}

enum Block {
    A {
        b1: BasicConv,
        b5: [BasicConv; 2],
        b3: [BasicConv; 3],
        pool: BasicConv,
    },
    B {
        b3: BasicConv,
        b3dbl: [BasicConv; 3],
    },
    C {
        b1: BasicConv,
        b7: [BasicConv; 3],
        b7dbl: [BasicConv; 5],
        pool: BasicConv,
    },
    D {
        b3: [BasicConv; 2],
        b7x3: [BasicConv; 4],
    },
    E {
        b1: BasicConv,
        b3_1: BasicConv,
        b3_2: [BasicConv; 2],
        b3dbl_12: [BasicConv; 2],
        b3dbl_3: [BasicConv; 2],
        pool: BasicConv,
    },
}

impl Block {
    fn a(s: &mut dyn WeightSource, n: &str, cin: usize, pool_features: usize) -> Result<Self> {
        let c = |s: &mut dyn WeightSource, b: &str, i, o, k, p| BasicConv::sq(s, &format!("{n}.{b}"), i, o, k, 1, p);
        Ok(Block::A {
            b1: c(s, "branch1x1", cin, 64, 1, 0)?,
            b5: [c(s, "branch5x5_1", cin, 48, 1, 0)?, c(s, "branch5x5_2", 48, 64, 5, 2)?],
            b3: [
                c(s, "branch3x3dbl_1", cin, 64, 1, 0)?,
                c(s, "branch3x3dbl_2", 64, 96, 3, 1)?,
                c(s, "branch3x3dbl_3", 96, 96, 3, 1)?,
            ],
            pool: c(s, "branch_pool", cin, pool_features, 1, 0)?,
        })
    }

    fn b(s: &mut dyn WeightSource, n: &str, cin: usize) -> Result<Self> {
        Ok(Block::B {
            b3: BasicConv::sq(s, &format!("{n}.branch3x3"), cin, 384, 3, 2, 0)?,
            b3dbl: [
                BasicConv::sq(s, &format!("{n}.branch3x3dbl_1"), cin, 64, 1, 1, 0)?,
                BasicConv::sq(s, &format!("{n}.branch3x3dbl_2"), 64, 96, 3, 1, 1)?,
                BasicConv::sq(s, &format!("{n}.branch3x3dbl_3"), 96, 96, 3, 2, 0)?,
            ],
        })
    }

    fn c(s: &mut dyn WeightSource, n: &str, cin: usize, c7: usize) -> Result<Self> {
        let row = |s: &mut dyn WeightSource, b: &str, i, o| BasicConv::new(s, &format!("{n}.{b}"), i, o, (1, 7), 1, (0, 3));
        let col = |s: &mut dyn WeightSource, b: &str, i, o| BasicConv::new(s, &format!("{n}.{b}"), i, o, (7, 1), 1, (3, 0));
        Ok(Block::C {
            b1: BasicConv::sq(s, &format!("{n}.branch1x1"), cin, 192, 1, 1, 0)?,
            b7: [
                BasicConv::sq(s, &format!("{n}.branch7x7_1"), cin, c7, 1, 1, 0)?,
                row(s, "branch7x7_2", c7, c7)?,
                col(s, "branch7x7_3", c7, 192)?,
            ],
            b7dbl: [
                BasicConv::sq(s, &format!("{n}.branch7x7dbl_1"), cin, c7, 1, 1, 0)?,
                col(s, "branch7x7dbl_2", c7, c7)?,
                row(s, "branch7x7dbl_3", c7, c7)?,
                col(s, "branch7x7dbl_4", c7, c7)?,
                row(s, "branch7x7dbl_5", c7, 192)?,
            ],
            pool: BasicConv::sq(s, &format!("{n}.branch_pool"), cin, 192, 1, 1, 0)?,
        })
    }

    fn d(s: &mut dyn WeightSource, n: &str, cin: usize) -> Result<Self> {
        Ok(Block::D {
            b3: [
                BasicConv::sq(s, &format!("{n}.branch3x3_1"), cin, 192, 1, 1, 0)?,
                BasicConv::sq(s, &format!("{n}.branch3x3_2"), 192, 320, 3, 2, 0)?,
            ],
            b7x3: [
                BasicConv::sq(s, &format!("{n}.branch7x7x3_1"), cin, 192, 1, 1, 0)?,
                BasicConv::new(s, &format!("{n}.branch7x7x3_2"), 192, 192, (1, 7), 1, (0, 3))?,
                BasicConv::new(s, &format!("{n}.branch7x7x3_3"), 192, 192, (7, 1), 1, (3, 0))?,
                BasicConv::sq(s, &format!("{n}.branch7x7x3_4"), 192, 192, 3, 2, 0)?,
            ],
        })
    }

    fn e(s: &mut dyn WeightSource, n: &str, cin: usize) -> Result<Self> {
        let pair = |s: &mut dyn WeightSource, a: &str, b: &str| -> Result<[BasicConv; 2]> {
            Ok([
                BasicConv::new(s, &format!("{n}.{a}"), 384, 384, (1, 3), 1, (0, 1))?,
                BasicConv::new(s, &format!("{n}.{b}"), 384, 384, (3, 1), 1, (1, 0))?,
            ])
        };
        Ok(Block::E {
            b1: BasicConv::sq(s, &format!("{n}.branch1x1"), cin, 320, 1, 1, 0)?,
            b3_1: BasicConv::sq(s, &format!("{n}.branch3x3_1"), cin, 384, 1, 1, 0)?,
            b3_2: pair(s, "branch3x3_2a", "branch3x3_2b")?,
            b3dbl_12: [
                BasicConv::sq(s, &format!("{n}.branch3x3dbl_1"), cin, 448, 1, 1, 0)?,
                BasicConv::sq(s, &format!("{n}.branch3x3dbl_2"), 448, 384, 3, 1, 1)?,
            ],
            b3dbl_3: pair(s, "branch3x3dbl_3a", "branch3x3dbl_3b")?,
            pool: BasicConv::sq(s, &format!("{n}.branch_pool"), cin, 192, 1, 1, 0)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let parts = match self {
            Block::A { b1, b5, b3, pool } => vec![
                b1.forward(x)?,
                seq(x, b5)?,
                seq(x, b3)?,
                pool.forward(&avg_pool_3x3_same(x)?)?,
            ],
            Block::B { b3, b3dbl } => vec![b3.forward(x)?, seq(x, b3dbl)?, max_pool_3x3_s2(x)?],
            Block::C { b1, b7, b7dbl, pool } => vec![
                b1.forward(x)?,
                seq(x, b7)?,
                seq(x, b7dbl)?,
                pool.forward(&avg_pool_3x3_same(x)?)?,
            ],
            Block::D { b3, b7x3 } => vec![seq(x, b3)?, seq(x, b7x3)?, max_pool_3x3_s2(x)?],
            Block::E {
                b1,
                b3_1,
                b3_2,
                b3dbl_12,
                b3dbl_3,
                pool,
            } => {
                let t = b3_1.forward(x)?;
                let u = seq(x, b3dbl_12)?;
                vec![
                    b1.forward(x)?,
                    b3_2[0].forward(&t)?,
                    b3_2[1].forward(&t)?,
                    b3dbl_3[0].forward(&u)?,
                    b3dbl_3[1].forward(&u)?,
                    pool.forward(&avg_pool_3x3_same(x)?)?,
                ]
            }
        };
        Ok(Tensor::cat(&parts, 1)?)
    }
}

pub struct InceptionV3 {
    stem: Vec<BasicConv>,
    blocks: Vec<Block>,
    standardized_input: bool,
}

impl InceptionV3 {
    fn build(src: &mut dyn WeightSource) -> Result<Self> {
        let stem = vec![
            BasicConv::sq(src, "Conv2d_1a_3x3", 3, 32, 3, 2, 0)?,
            BasicConv::sq(src, "Conv2d_2a_3x3", 32, 32, 3, 1, 0)?,
            BasicConv::sq(src, "Conv2d_2b_3x3", 32, 64, 3, 1, 1)?,
            BasicConv::sq(src, "Conv2d_3b_1x1", 64, 80, 1, 1, 0)?,
            BasicConv::sq(src, "Conv2d_4a_3x3", 80, 192, 3, 1, 0)?,
        ];
        let blocks = vec![
            Block::a(src, "Mixed_5b", 192, 32)?,
            Block::a(src, "Mixed_5c", 256, 64)?,
            Block::a(src, "Mixed_5d", 288, 64)?,
            Block::b(src, "Mixed_6a", 288)?,
            Block::c(src, "Mixed_6b", 768, 128)?,
            Block::c(src, "Mixed_6c", 768, 160)?,
            Block::c(src, "Mixed_6d", 768, 160)?,
            Block::c(src, "Mixed_6e", 768, 192)?,
            Block::d(src, "Mixed_7a", 768)?,
            Block::e(src, "Mixed_7b", 1280)?,
            Block::e(src, "Mixed_7c", 2048)?,
        ];
        Ok(Self {
            stem,
            blocks,
            standardized_input: false,
        })
    }

    /// Loads torchvision-named weights; extra tensors (e.g. the classifier) are ignored.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        let map = candle_core::safetensors::load(path, &Device::Cpu)?;
        Self::build(&mut MapSource(map))
    }

    /// He-initialized weights; only useful for shape tests.
    pub fn random(seed: u64) -> Result<Self> {
        Self::build(&mut RandomSource(ChaCha8Rng::seed_from_u64(seed)))
    }

    /// Declares that inputs are ImageNet-standardized rather than in `[0, 1]`.
    pub fn with_standardized_input(mut self, yes: bool) -> Self {
        self.standardized_input = yes;
        self
    }

    /// `[N, 3, H, W]` to `[N, 2048]` pool features.
    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        let x = images.to_dtype(DType::F32)?;
        let x = if self.standardized_input {
            let scale: Vec<f32> = IMAGENET_STD.iter().map(|s| (s / 0.5) as f32).collect();
            let shift: Vec<f32> = IMAGENET_MEAN.iter().map(|m| ((m - 0.5) / 0.5) as f32).collect();
            let scale = Tensor::from_vec(scale, (1, 3, 1, 1), &Device::Cpu)?;
            let shift = Tensor::from_vec(shift, (1, 3, 1, 1), &Device::Cpu)?;
            x.broadcast_mul(&scale)?.broadcast_add(&shift)?
        } else {
            ((x * 2.0)? - 1.0)?
        };
        let mut x = x.upsample_bilinear2d(INCEPTION_SIZE, INCEPTION_SIZE, false)?;
        for (i, conv) in self.stem.iter().enumerate() {
            x = conv.forward(&x)?;
            if i == 2 || i == 4 {
                x = max_pool_3x3_s2(&x)?;
            }
        }
        for b in &self.blocks {
            x = b.forward(&x)?;
        }
        Ok(x.mean(D::Minus1)?.mean(D::Minus1)?)
    }
}

impl FeatureExtractor for InceptionV3 {
    fn name(&self) -> &str {
        "inception_v3"
    }

    fn dim(&self) -> usize {
        INCEPTION_DIM
    }

    fn extract(&self, images: &Tensor) -> Result<DMatrix<f64>> {
        let f = self.forward(images)?.to_dtype(DType::F64)?;
        let (n, d) = f.dims2()?;
        Ok(DMatrix::from_row_slice(n, d, &f.flatten_all()?.to_vec1::<f64>()?))
    }
}
