//! Command implementations behind the `uvcgan2` binary.

use std::path::{Path, PathBuf};

use candle_core::Tensor;
use image::{imageops, RgbImage};

use crate::config::{ExperimentConfig, ExtractorKind, Preset};
use crate::data::{io, load_square, make_toy_dataset, Dataset, ToySpec};
use crate::error::{Error, Result};
use crate::evaluation::inception::InceptionV3;
use crate::evaluation::{evaluate, EvalInputs, EvalReport, FeatureExtractor, StubExtractor};
use crate::generator::Generator;
use crate::pretrain::run_pretrain;
use crate::trainer::{ablation_variant, load_generator, Ablation, Direction, Trainer};

/// Builds the experiment config from an optional file, an optional preset
/// (used only without a file) and `key=value` overrides applied in order.
pub fn resolve_config(path: Option<&Path>, preset: Option<Preset>, sets: &[String]) -> Result<ExperimentConfig> {
    let mut cfg = match (path, preset) {
        (Some(p), None) => ExperimentConfig::load(p)?,
        (Some(_), Some(_)) => return Err(Error::Config("give either a config file or a preset, not both".into())),
        (None, p) => ExperimentConfig::preset(p.unwrap_or(Preset::Toy)),
    };
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Logs the resolved config and stores it as `out_dir/config.txt`.
fn record_config(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let text = cfg.to_text();
    log::info!("resolved config (hash {}):\n{text}", cfg.config_hash());
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let p = out_dir.join("config.txt");
    std::fs::write(&p, text).map_err(|e| Error::io(format!("writing {}", p.display()), e))
}

pub fn cmd_make_toy(out: &Path, spec: &ToySpec) -> Result<()> {
    let ds = make_toy_dataset(out, spec)?;
    log::info!("toy dataset written to {}", ds.root().display());
    Ok(())
}

pub fn cmd_pretrain(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf> {
    record_config(cfg, out_dir)?;
    let ds = Dataset::open(&cfg.data)?;
    run_pretrain(cfg, &ds, out_dir, |step, loss| log::info!("pretrain step {step}: loss {loss:.5}"))?;
    Ok(out_dir.join("pretrain.safetensors"))
}

pub fn cmd_train(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    resume: Option<&Path>,
    ablation: Option<Ablation>,
) -> Result<PathBuf> {
    let cfg = match ablation {
        Some(t) => ablation_variant(cfg, t),
        None => cfg.clone(),
    };
    record_config(&cfg, out_dir)?;
    let ds = Dataset::open(&cfg.data)?;
    let mut tr = match resume {
        Some(p) => Trainer::resume(&cfg, p)?,
        None => Trainer::new(&cfg)?,
    };
    tr.run(&ds, out_dir, |it, fields| {
        let get = |k: &str| fields.iter().find(|(n, _)| *n == k).map_or(f64::NAN, |(_, v)| *v);
        log::info!(
            "iter {it}: gen {:.4} disc {:.4} cyc {:.4}/{:.4}",
            get("loss_gen"),
            get("loss_disc"),
            get("loss_cyc_a"),
            get("loss_cyc_b")
        );
    })?;
    Ok(out_dir.join("checkpoint.safetensors"))
}

fn translate_one(g: &Generator, path: &Path) -> Result<(Tensor, Tensor)> {
    let x = load_square(path, g.config().image_size as u32)?;
    let y = g.forward(&x.unsqueeze(0)?)?.squeeze(0)?;
    Ok((x, y))
}

/// Translates every image in `in_dir` into `out_dir/<stem>.png`.
pub fn cmd_translate(ckpt: &Path, in_dir: &Path, out_dir: &Path, direction: Direction, use_ema: bool) -> Result<usize> {
    let (_, g) = load_generator(ckpt, direction, use_ema)?;
    let files = io::list_images(in_dir)?;
    for f in &files {
        let (_, y) = translate_one(&g, f)?;
        let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        io::save_tensor_png(&y, &out_dir.join(format!("{stem}.png")))?;
    }
    log::info!("translated {} images into {}", files.len(), out_dir.display());
    Ok(files.len())
}

/// One row per input: the input next to its translation, cells of the model's image size.
pub fn cmd_grid(ckpt: &Path, inputs: &[PathBuf], out: &Path, direction: Direction, use_ema: bool) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("grid needs at least one input image".into()));
    }
    let (_, g) = load_generator(ckpt, direction, use_ema)?;
    let s = g.config().image_size as u32;
    let mut canvas = RgbImage::new(2 * s, s * inputs.len() as u32);
    for (row, p) in inputs.iter().enumerate() {
        let (x, y) = translate_one(&g, p)?;
        for (col, t) in [x, y].iter().enumerate() {
            let cell = io::to_rgb8(&io::tensor_to_image(t)?);
            imageops::replace(&mut canvas, &cell, (col as u32 * s) as i64, (row as u32 * s) as i64);
        }
    }
    let bytes = io::encode_png(&canvas)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    std::fs::write(out, bytes).map_err(|e| Error::io(format!("writing {}", out.display()), e))
}

/// Feature extractor selected by the eval section.
pub fn make_extractor(cfg: &ExperimentConfig) -> Result<Box<dyn FeatureExtractor>> {
    match cfg.eval.extractor {
        ExtractorKind::Stub => Ok(Box::new(StubExtractor::new(
            StubExtractor::DEFAULT_GRID,
            StubExtractor::DEFAULT_DIM,
            cfg.eval.seed,
        ))),
        ExtractorKind::Inception => {
            let standardized = cfg.eval_protocol().standardize.is_some();
            let net = InceptionV3::load(&cfg.eval.inception_weights)?.with_standardized_input(standardized);
            Ok(Box::new(net))
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvaluateArgs {
    pub translated: PathBuf,
    pub target: PathBuf,
    pub source: Option<PathBuf>,
    pub source_landmarks: Option<PathBuf>,
    pub translated_landmarks: Option<PathBuf>,
    pub report: PathBuf,
}

pub fn cmd_evaluate(cfg: &ExperimentConfig, args: &EvaluateArgs) -> Result<EvalReport> {
    log::info!("resolved config (hash {}):\n{}", cfg.config_hash(), cfg.to_text());
    let extractor = make_extractor(cfg)?;
    let inputs = EvalInputs {
        translated_dir: args.translated.clone(),
        target_dir: args.target.clone(),
        source_dir: args.source.clone(),
        source_landmarks: args.source_landmarks.clone(),
        translated_landmarks: args.translated_landmarks.clone(),
        protocol: cfg.eval_protocol(),
        kid_subsets: cfg.eval.kid_subsets,
        kid_estimator: cfg.eval.kid_estimator,
        seed: cfg.eval.seed,
    };
    let report = evaluate(&inputs, extractor.as_ref())?;
    report.write(&args.report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{save_generator, tiny_config};
    use rand::SeedableRng;

    #[test]
    fn overrides_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        std::fs::write(&p, "preset = toy\ntrain.seed = 3\n").unwrap();
        let cfg = resolve_config(Some(&p), None, &["train.seed=4".into()]).unwrap();
        assert_eq!(cfg.train.seed, 4);
        assert!(resolve_config(Some(&p), Some(Preset::Toy), &[]).unwrap_err().is_config_error());
        assert!(resolve_config(None, None, &["nope".into()]).unwrap_err().is_config_error());
        assert!(matches!(
            resolve_config(Some(&dir.path().join("missing.txt")), None, &[]).unwrap_err(),
            Error::Missing(_)
        ));
    }

    #[test]
    fn translate_and_grid_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let g = Generator::new(&cfg.generator, candle_core::DType::F32, &mut rng).unwrap();
        let ckpt = dir.path().join("g.safetensors");
        save_generator(&ckpt, &cfg, &g, 0).unwrap();
        let spec = ToySpec { train_count: 2, test_count: 4, ..Default::default() };
        make_toy_dataset(&dir.path().join("toy"), &spec).unwrap();
        let in_dir = dir.path().join("toy/testA");
        let out_dir = dir.path().join("out");
        assert_eq!(cmd_translate(&ckpt, &in_dir, &out_dir, Direction::AToB, true).unwrap(), 4);
        let img = image::open(out_dir.join("00000.png")).unwrap();
        assert_eq!((img.width(), img.height()), (32, 32));

        let inputs = io::list_images(&in_dir).unwrap();
        let grid = dir.path().join("grid.png");
        cmd_grid(&ckpt, &inputs, &grid, Direction::AToB, true).unwrap();
        let first = std::fs::read(&grid).unwrap();
        let img = image::load_from_memory(&first).unwrap();
        assert_eq!((img.width(), img.height()), (64, 128));
        cmd_grid(&ckpt, &inputs, &grid, Direction::AToB, true).unwrap();
        assert_eq!(std::fs::read(&grid).unwrap(), first);
    }

    #[test]
    fn evaluate_identical_sets_gives_zero_fid() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ToySpec { train_count: 2, test_count: 12, ..Default::default() };
        make_toy_dataset(dir.path(), &spec).unwrap();
        let cfg = ExperimentConfig::toy();
        let args = EvaluateArgs {
            translated: dir.path().join("testB"),
            target: dir.path().join("testB"),
            report: dir.path().join("report.json"),
            ..Default::default()
        };
        let r = cmd_evaluate(&cfg, &args).unwrap();
        assert!(r.fid.abs() < 1e-6, "{}", r.fid);
        assert!(args.report.is_file());
    }
}
