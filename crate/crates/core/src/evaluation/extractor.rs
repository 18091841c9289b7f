//! Image feature extractors used by the realism metrics.

use candle_core::{DType, Device, Tensor};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Result};
use crate::nn::ops::area_downsample;

/// Maps preprocessed images `[N, 3, H, W]` to feature rows `[N, dim]`.
pub trait FeatureExtractor {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn extract(&self, images: &Tensor) -> Result<DMatrix<f64>>;
}

/// Area-downsampled pixels through a fixed random projection.
#[derive(Debug, Clone)]
pub struct StubExtractor {
    grid: usize,
    projection: Tensor,
}

impl StubExtractor {
    pub const DEFAULT_GRID: usize = 8;
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(grid: usize, dim: usize, seed: u64) -> Self {
        let inputs = 3 * grid * grid;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (inputs as f64).sqrt();
        let w: Vec<f64> = (0..inputs * dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        let projection = Tensor::from_vec(w, (inputs, dim), &Device::Cpu).expect("projection shape");
        Self { grid, projection }
    }
}

impl Default for StubExtractor {
    fn default() -> Self {
        Self::new(Self::DEFAULT_GRID, Self::DEFAULT_DIM, 0)
    }
}

impl FeatureExtractor for StubExtractor {
    fn name(&self) -> &str {
        "stub"
    }

    fn dim(&self) -> usize {
        self.projection.dim(1).expect("rank 2")
    }

    fn extract(&self, images: &Tensor) -> Result<DMatrix<f64>> {
        let (n, c, _, _) = images.dims4()?;
        if c != 3 {
            return Err(shape_err!("stub extractor expects 3 channels, got {c}"));
        }
        let small = area_downsample(&images.to_dtype(DType::F64)?, self.grid)?;
        let feats = small.reshape((n, ()))?.matmul(&self.projection)?;
        let v = feats.flatten_all()?.to_vec1::<f64>()?;
        Ok(DMatrix::from_row_slice(n, self.dim(), &v))
    }
}

/// Runs `extractor` over images in chunks and stacks the rows.
pub fn extract_all(extractor: &dyn FeatureExtractor, images: &[Tensor], chunk: usize) -> Result<DMatrix<f64>> {
    let mut rows: Vec<f64> = Vec::with_capacity(images.len() * extractor.dim());
    for part in images.chunks(chunk.max(1)) {
        let batch = Tensor::stack(part, 0)?;
        let f = extractor.extract(&batch)?;
        for r in 0..f.nrows() {
            rows.extend(f.row(r).iter());
        }
    }
    Ok(DMatrix::from_row_slice(images.len(), extractor.dim(), &rows))
}
