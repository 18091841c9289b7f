//! Realism, faithfulness and diversity metrics plus the evaluation protocols.

pub mod extractor;
pub mod faithfulness;
pub mod fid;
pub mod inception;
pub mod kid;
pub mod preprocess;
mod report;

pub use extractor::{extract_all, FeatureExtractor, StubExtractor};
pub use faithfulness::{
    diversity, lm_l2, mean_pair_distance, pixel_l2, pixel_metrics, psnr_from_l2, ssim, Landmark, PixelMetrics,
    Planar, PSNR_CAP_DB,
};
pub use fid::fid;
pub use kid::{kid, mmd2, KidEstimator, KidResult};
pub use preprocess::{preprocess, EvalProtocol, ProtocolKind};
pub use report::{evaluate, read_landmarks, EvalInputs, EvalReport};

use nalgebra::DMatrix;

use crate::error::Result;

/// Mean feature distance between source and translated images (paired by index).
pub fn i_l2(extractor: &dyn FeatureExtractor, src: &[candle_core::Tensor], trans: &[candle_core::Tensor]) -> Result<f64> {
    let rows = |m: DMatrix<f64>| -> Vec<Vec<f64>> { m.row_iter().map(|r| r.iter().copied().collect()).collect() };
    let a = rows(extract_all(extractor, src, 64)?);
    let b = rows(extract_all(extractor, trans, 64)?);
    mean_pair_distance(&a, &b)
}
