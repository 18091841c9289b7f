use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::Rgb32FImage;
use serde::{Deserialize, Serialize};

use super::extractor::{extract_all, FeatureExtractor};
use super::faithfulness::{diversity, lm_l2, mean_pair_distance, pixel_metrics, Landmark};
use super::fid::fid;
use super::kid::{kid, KidEstimator};
use super::preprocess::{preprocess, to_planar, EvalProtocol};
use crate::data::augment::resize_exact;
use crate::data::io::{list_images, load_rgb};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub fid: f64,
    pub kid_mean: f64,
    pub kid_std: f64,
    pub i_l2: Option<f64>,
    pub lm_l2: Option<f64>,
    pub pixel_l2: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub diversity: Option<f64>,
    pub n_images: usize,
}

impl EvalReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

#[derive(Debug, Clone)]
pub struct EvalInputs {
    pub translated_dir: PathBuf,
    pub target_dir: PathBuf,
    /// Source images, paired with translations by file stem.
    pub source_dir: Option<PathBuf>,
    /// Landmark JSON files (`<stem>.json`) for sources and translations.
    pub source_landmarks: Option<PathBuf>,
    pub translated_landmarks: Option<PathBuf>,
    pub protocol: EvalProtocol,
    pub kid_subsets: usize,
    pub kid_estimator: KidEstimator,
    pub seed: u64,
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn load_dir(dir: &Path) -> Result<Vec<(String, Rgb32FImage)>> {
    let files = list_images(dir)?;
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no images in {}", dir.display())));
    }
    files.iter().map(|p| Ok((stem(p), load_rgb(p)?))).collect()
}

pub fn read_landmarks(path: &Path) -> Result<Vec<Landmark>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Realism metrics against `target_dir` and, when sources are given,
/// faithfulness metrics for every translated image whose stem matches a source.
pub fn evaluate(inputs: &EvalInputs, extractor: &dyn FeatureExtractor) -> Result<EvalReport> {
    let protocol = &inputs.protocol;
    let translated = load_dir(&inputs.translated_dir)?;
    let target = load_dir(&inputs.target_dir)?;
    let prep = |set: &[(String, Rgb32FImage)]| -> Result<Vec<_>> {
        set.iter().map(|(_, img)| preprocess(img, protocol)).collect()
    };
    let tr_pre = prep(&translated)?;
    let tr_feats = extract_all(extractor, &tr_pre, 64)?;
    let tg_feats = extract_all(extractor, &prep(&target)?, 64)?;
    let fid_value = fid(&tr_feats, &tg_feats)?;
    let subset = protocol.kid_subset_size.min(translated.len()).min(target.len());
    if subset < protocol.kid_subset_size {
        log::warn!(
            "kid subset size lowered from {} to {subset} to fit the image sets",
            protocol.kid_subset_size
        );
    }
    let k = kid(&tr_feats, &tg_feats, subset, inputs.kid_subsets, inputs.kid_estimator, inputs.seed)?;

    let rows: Vec<Vec<f64>> = tr_feats.row_iter().map(|r| r.iter().copied().collect()).collect();
    let div = if rows.len() >= 2 {
        Some(diversity(&rows, |a, b| mean_pair_distance(std::slice::from_ref(a), std::slice::from_ref(b)))?)
    } else {
        None
    };

    let mut report = EvalReport {
        protocol: protocol.kind.to_string(),
        fid: fid_value,
        kid_mean: k.mean,
        kid_std: k.std,
        i_l2: None,
        lm_l2: None,
        pixel_l2: None,
        psnr: None,
        ssim: None,
        diversity: div,
        n_images: translated.len(),
    };

    if let Some(src_dir) = &inputs.source_dir {
        let sources: BTreeMap<String, Rgb32FImage> = load_dir(src_dir)?.into_iter().collect();
        let (mut src_pre, mut tr_sel) = (Vec::new(), Vec::new());
        let (mut l2, mut psnr, mut ssim) = (0.0, 0.0, 0.0);
        for (i, (name, img)) in translated.iter().enumerate() {
            let Some(src) = sources.get(name) else { continue };
            src_pre.push(preprocess(src, protocol)?);
            tr_sel.push(tr_pre[i].clone());
            let (w, h) = img.dimensions();
            let src_px = resize_exact(src, w, h, FilterType::Lanczos3);
            let m = pixel_metrics(&to_planar(&src_px), &to_planar(img))?;
            l2 += m.l2;
            psnr += m.psnr;
            ssim += m.ssim;
        }
        if src_pre.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no translated image matches a source image in {}",
                src_dir.display()
            )));
        }
        let n = src_pre.len() as f64;
        let to_rows = |m: nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> {
            m.row_iter().map(|r| r.iter().copied().collect()).collect()
        };
        let fs = to_rows(extract_all(extractor, &src_pre, 64)?);
        let ft = to_rows(extract_all(extractor, &tr_sel, 64)?);
        report.i_l2 = Some(mean_pair_distance(&fs, &ft)?);
        report.pixel_l2 = Some(l2 / n);
        report.psnr = Some(psnr / n);
        report.ssim = Some(ssim / n);
    }

    if let (Some(ls), Some(lt)) = (&inputs.source_landmarks, &inputs.translated_landmarks) {
        let mut total = 0.0;
        let mut count = 0usize;
        for (name, _) in &translated {
            let (a, b) = (ls.join(format!("{name}.json")), lt.join(format!("{name}.json")));
            if a.is_file() && b.is_file() {
                total += lm_l2(&read_landmarks(&a)?, &read_landmarks(&b)?)?;
                count += 1;
            }
        }
        if count > 0 {
            report.lm_l2 = Some(total / count as f64);
        }
    }
    Ok(report)
}
