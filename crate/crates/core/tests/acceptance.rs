//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p uvcgan2 --test acceptance`. Extra arguments select
//! criteria by substring, e.g. `-- oracles`. Exits non-zero when any selected
//! criterion fails.

use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use candle_core::{DType, Device, Tensor, Var};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use uvcgan2::cli::{cmd_evaluate, cmd_translate, EvaluateArgs};
use uvcgan2::config::ExperimentConfig;
use uvcgan2::data::{load_square, make_toy_dataset, ToySpec};
use uvcgan2::discriminator::{bsd_statistic, concat_with_cache, Discriminator, FeatureCache};
use uvcgan2::evaluation::faithfulness::{lm_l2, pixel_metrics, ssim, Planar};
use uvcgan2::evaluation::fid::frechet_distance;
use uvcgan2::evaluation::{fid, kid, KidEstimator};
use uvcgan2::generator::{demodulate, modulate, modulated_conv, Generator, DEMOD_EPS};
use uvcgan2::losses::r1_penalty;
use uvcgan2::nn::PowerIteration;
use uvcgan2::params::{assign, Init, ParamStore};
use uvcgan2::pretrain::{mask_patches, masked_fraction, run_pretrain};
use uvcgan2::trainer::{ablation_variant, tiny_config, Ablation, Direction, Ema, Trainer};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64())
    })
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn tensor(data: Vec<f64>, shape: &[usize]) -> Tensor {
    Tensor::from_vec(data, shape, &Device::Cpu).expect("tensor")
}

fn to_vec(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()
}

#[allow(clippy::needless_range_loop)]
fn modulation_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_norm_gap = 0f64;
    for trial in 0..50 {
        let (o, i, k) = (1 + trial % 7, 1 + trial % 5, [1, 3, 5][trial % 3]);
        let w = randn(&mut rng, o * i * k * k);
        let s: Vec<f64> = (0..i).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ours = to_vec(&modulate(&tensor(w.clone(), &[o, i, k, k]), &tensor(s.clone(), &[i])).map_err(e)?);
        let mut oracle = vec![0.0; w.len()];
        for a in 0..o {
            for b in 0..i {
                for x in 0..k {
                    for y in 0..k {
                        let idx = ((a * i + b) * k + x) * k + y;
                        oracle[idx] = s[b] * w[idx];
                    }
                }
            }
        }
        ensure(ours == oracle, || format!("modulate differs from the loop oracle in trial {trial}"))?;
        let demod = to_vec(&demodulate(&tensor(ours, &[o, i, k, k]), DEMOD_EPS).map_err(e)?);
        for row in demod.chunks(i * k * k) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            ensure((1.0 - 1e-4..=1.0).contains(&norm), || format!("demodulated norm {norm} in trial {trial}"))?;
            worst_norm_gap = worst_norm_gap.max(1.0 - norm);
        }
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!(
        "50 trials exact, worst 1 - norm {worst_norm_gap:.2e}, {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

fn magnitude_preservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (c, o, hw) = (16, 16, 32);
    let mut good = 0;
    let (mut lo, mut hi) = (f64::INFINITY, 0f64);
    for _ in 0..100 {
        let x = tensor(randn(&mut rng, c * hw * hw), &[1, c, hw, hw]);
        let w = tensor(randn(&mut rng, o * c * 9), &[o, c, 3, 3]);
        let s: Vec<f64> = (0..c).map(|_| rng.random_range(0.1..3.0)).collect();
        let y = to_vec(&modulated_conv(&x, &w, &tensor(s, &[1, c]), DEMOD_EPS).map_err(e)?);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let std = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
        lo = lo.min(std);
        hi = hi.max(std);
        if (0.8..=1.2).contains(&std) {
            good += 1;
        }
    }
    ensure(good >= 95, || format!("only {good}/100 trials in [0.8, 1.2]"))?;
    Ok(format!("{good}/100 trials in range, std in [{lo:.3}, {hi:.3}]"))
}

/// Picks up to `per_tensor` entries of every selected parameter.
fn pick_entries(store: &ParamStore, keep: impl Fn(&str) -> bool, per_tensor: usize, seed: u64) -> Vec<(String, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, var) in store.params() {
        if !keep(name) {
            continue;
        }
        let n = var.elem_count();
        for _ in 0..per_tensor.min(n) {
            out.push((name.clone(), rng.random_range(0..n)));
        }
    }
    out
}

/// Central differences in f64 of `f` with respect to the chosen entries of `store`.
fn finite_differences(
    store: &ParamStore,
    entries: &[(String, usize)],
    f: &dyn Fn() -> Result<f64, String>,
) -> Result<Vec<f64>, String> {
    let h = 1e-6;
    let mut out = Vec::with_capacity(entries.len());
    for (name, idx) in entries {
        let var: &Var = store.param(name).ok_or("missing parameter")?;
        let orig = var.as_tensor().copy().map_err(e)?;
        let shape = orig.dims().to_vec();
        let mut vals = to_vec(&orig);
        let base = vals[*idx];
        vals[*idx] = base + h;
        assign(var, &tensor(vals.clone(), &shape)).map_err(e)?;
        let plus = f()?;
        vals[*idx] = base - h;
        assign(var, &tensor(vals, &shape)).map_err(e)?;
        let minus = f()?;
        assign(var, &orig).map_err(e)?;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

fn analytic(store: &ParamStore, entries: &[(String, usize)], loss: &Tensor) -> Result<Vec<f64>, String> {
    let grads = loss.backward().map_err(e)?;
    entries
        .iter()
        .map(|(name, idx)| {
            let var = store.param(name).ok_or("missing parameter")?;
            // Parameters the loss does not depend on get no gradient entry.
            Ok(grads.get(var.as_tensor()).map_or(0.0, |g| to_vec(g)[*idx]))
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-300)
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let cfg = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let d32 = Discriminator::new(&cfg.discriminator, DType::F32, &mut rng).map_err(e)?;
    d32.power_iterate().map_err(e)?;
    let d64 = d32.to_dtype(DType::F64).map_err(e)?;
    let s = cfg.discriminator.image_size;
    let real = tensor(randn(&mut rng, 2 * 3 * s * s), &[2, 3, s, s]).tanh().map_err(e)?;
    let cache = FeatureCache::new(cfg.discriminator.cache_capacity);
    let penalty = |d: &Discriminator, x: &Tensor| r1_penalty(&|x| Ok(d.score(x, &cache)?.0), x, 1.0);
    let entries = pick_entries(d32.store(), |_| true, 3, 4);
    let real32 = real.to_dtype(DType::F32).map_err(e)?;
    let ga = analytic(d32.store(), &entries, &penalty(&d32, &real32).map_err(e)?)?;
    let gf = finite_differences(d64.store(), &entries, &|| {
        penalty(&d64, &real).and_then(|t| Ok(t.to_scalar::<f64>()?)).map_err(e)
    })?;
    let r1_err = relative_error(&ga, &gf);

    let g32 = Generator::new(&cfg.generator, DType::F32, &mut rng).map_err(e)?;
    let g64 = g32.to_dtype(DType::F64).map_err(e)?;
    let gs = cfg.generator.image_size;
    let x = tensor(randn(&mut rng, 3 * gs * gs), &[1, 3, gs, gs]).tanh().map_err(e)?;
    let probe = tensor(randn(&mut rng, 3 * gs * gs), &[1, 3, gs, gs]);
    let objective = |g: &Generator, x: &Tensor, p: &Tensor| -> uvcgan2::Result<Tensor> {
        Ok((g.forward(x)? * p)?.sum_all()?)
    };
    let entries = pick_entries(g32.store(), |n| n.contains(".style."), 8, 5);
    ensure(!entries.is_empty(), || "generator has no style projection".into())?;
    let (x32, p32) = (x.to_dtype(DType::F32).map_err(e)?, probe.to_dtype(DType::F32).map_err(e)?);
    let ga = analytic(g32.store(), &entries, &objective(&g32, &x32, &p32).map_err(e)?)?;
    let gf = finite_differences(g64.store(), &entries, &|| {
        objective(&g64, &x, &probe).and_then(|t| Ok(t.to_scalar::<f64>()?)).map_err(e)
    })?;
    let style_err = relative_error(&ga, &gf);

    ensure(r1_err < 1e-3, || format!("R1 relative error {r1_err:.2e}"))?;
    ensure(style_err < 1e-3, || format!("style projection relative error {style_err:.2e}"))?;
    within(start.elapsed(), 60.0)?;
    Ok(format!(
        "R1 rel err {r1_err:.2e}, style projection rel err {style_err:.2e}, {:.1}s",
        start.elapsed().as_secs_f64()
    ))
}

fn feature_cache_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for capacity in 0..5 {
        let mut cache = FeatureCache::new(capacity);
        let mut oracle: VecDeque<f64> = VecDeque::new();
        for step in 0..40 {
            let v: f64 = rng.random();
            cache.push(&tensor(vec![v; 4], &[1, 2, 2])).map_err(e)?;
            oracle.push_back(v);
            while oracle.len() > capacity {
                oracle.pop_front();
            }
            let got: Vec<f64> = cache.entries().map(|t| to_vec(t)[0]).collect();
            ensure(got == oracle.iter().copied().collect::<Vec<_>>(), || {
                format!("capacity {capacity}, step {step}: {got:?} vs {oracle:?}")
            })?;
        }
    }

    let mut cache = FeatureCache::new(3);
    for k in 0..5 {
        cache.push(&tensor(vec![k as f64; 8], &[2, 2, 2])).map_err(e)?;
    }
    let current = tensor(vec![9.0; 8], &[1, 2, 2, 2]);
    let all = concat_with_cache(&current, &cache).map_err(e)?;
    ensure(all.dims() == [4, 2, 2, 2], || format!("batch head saw {:?}", all.dims()))?;
    let firsts: Vec<f64> = (0..4).map(|i| to_vec(&all.get(i).unwrap())[0]).collect();
    ensure(firsts == [9.0, 2.0, 3.0, 4.0], || format!("concat order {firsts:?}"))?;

    let same = tensor(vec![0.7; 4 * 8], &[4, 2, 2, 2]);
    let zero = to_vec(&bsd_statistic(&same).map_err(e)?)[0];
    ensure(zero == 0.0, || format!("identical samples give {zero}"))?;
    let pair = tensor([vec![0.0; 8], vec![2.0; 8]].concat(), &[2, 2, 2, 2]);
    let one = to_vec(&bsd_statistic(&pair).map_err(e)?)[0];
    ensure(one == 1.0, || format!("samples 0 and 2 give {one}"))?;
    let three = tensor([vec![1.0; 4], vec![2.0; 4], vec![6.0; 4]].concat(), &[3, 1, 2, 2]);
    let expected = (14f64 / 3.0).sqrt();
    let got = to_vec(&bsd_statistic(&three).map_err(e)?)[0];
    ensure((got - expected).abs() < 1e-12, || format!("samples 1, 2, 6 give {got}, expected {expected}"))?;
    Ok("FIFO matches the list oracle for capacities 0-4, head sees 4 samples, BSD cases exact".into())
}

fn ema_closed_form() -> Outcome {
    let m = 0.9999;
    let mut store = ParamStore::new(DType::F32);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let var = store.builder(&mut rng).get("w", &[16], Init::Normal(1.0)).map_err(e)?;
    let avg0 = to_vec(&var);
    let mut ema = Ema::new(&store, m).map_err(e)?;
    let target = store.deep_clone().map_err(e)?;
    let w: Vec<f64> = randn(&mut rng, 16).iter().map(|v| (*v as f32) as f64).collect();
    assign(store.param("w").unwrap(), &tensor(w.clone(), &[16]).to_dtype(DType::F32).map_err(e)?).map_err(e)?;
    let mut worst = 0f64;
    for k in 1..=10_000u32 {
        ema.update(&store, &target).map_err(e)?;
        if k.is_power_of_two() || k % 1000 == 0 {
            let got = to_vec(&ema.master()["w"]);
            let mk = m.powi(k as i32);
            for ((g, a0), wi) in got.iter().zip(&avg0).zip(&w) {
                worst = worst.max((g - (mk * a0 + (1.0 - mk) * wi)).abs());
            }
        }
    }
    ensure(worst < 1e-6, || format!("max deviation {worst:.2e}"))?;
    Ok(format!("max deviation {worst:.2e} over k <= 10^4"))
}

fn spectral_norm_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0f64;
    for trial in 0..50 {
        let (r, c) = (rng.random_range(2..24), rng.random_range(2..40));
        let data = randn(&mut rng, r * c);
        let w = tensor(data.clone(), &[r, c]);
        let mut pi = PowerIteration::new(tensor(randn(&mut rng, r), &[r]), tensor(randn(&mut rng, c), &[c])).map_err(e)?;
        for _ in 0..2000 {
            pi.step(&w).map_err(e)?;
        }
        let sigma = pi.sigma(&w).map_err(e)?.to_scalar::<f64>().map_err(e)?;
        let svd = DMatrix::from_row_slice(r, c, &data).singular_values();
        let top = svd.max();
        let rel = (sigma - top).abs() / top;
        worst = worst.max(rel);
        ensure(rel < 1e-3, || format!("trial {trial} ({r}x{c}): {sigma} vs {top}"))?;
    }
    Ok(format!("50 matrices, worst relative error {worst:.2e}"))
}

/// `Tr sqrt(Sx Sy)` from the eigenvalues of the (non-symmetric) product.
fn trace_sqrt_oracle(sx: &DMatrix<f64>, sy: &DMatrix<f64>) -> f64 {
    (sx * sy).complex_eigenvalues().iter().map(|l| l.re.max(0.0).sqrt()).sum()
}

fn sample_stats(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let mean = x.row_mean().transpose();
    let centered = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - mean[j]);
    (mean, centered.transpose() * &centered / (n - 1.0))
}

fn fid_kid_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (n, d) = (60, 6);
    let x = DMatrix::from_row_slice(n, d, &randn(&mut rng, n * d));
    let same = fid(&x, &x).map_err(e)?;
    ensure(same < 1e-8, || format!("FID of identical sets {same:e}"))?;
    let k = kid(&x, &x, 20, 50, KidEstimator::PairedU, 0).map_err(e)?;
    ensure(k.mean.abs() < 1e-6, || format!("KID of identical sets {:e}", k.mean))?;

    let mix = DMatrix::from_row_slice(d, d, &randn(&mut rng, d * d));
    let y = DMatrix::from_row_slice(n + 15, d, &randn(&mut rng, (n + 15) * d)) * &mix
        + DMatrix::from_fn(n + 15, d, |_, j| 0.3 * j as f64);
    let (mx, sx) = sample_stats(&x);
    let (my, sy) = sample_stats(&y);
    let closed = (&mx - &my).norm_squared() + sx.trace() + sy.trace() - 2.0 * trace_sqrt_oracle(&sx, &sy);
    let got = fid(&x, &y).map_err(e)?;
    ensure((got - closed).abs() < 1e-6, || format!("Gaussian FID {got} vs closed form {closed}"))?;

    let xs = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let ys = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
    let paired = kid(&xs, &ys, 2, 5, KidEstimator::PairedU, 0).map_err(e)?;
    let standard = kid(&xs, &ys, 2, 5, KidEstimator::Standard, 0).map_err(e)?;
    ensure((paired.mean - 19.0).abs() < 1e-9 && paired.std.abs() < 1e-9, || format!("paired KID {paired:?}"))?;
    ensure((standard.mean - 9.5).abs() < 1e-9, || format!("standard KID {standard:?}"))?;

    let (vx, vy) = ([1.0, 4.0, 0.25, 9.0], [4.0, 1.0, 1.0, 9.0]);
    let (ma, mb) = (DVector::from_vec(vec![1.0, 0.0, -1.0, 2.0]), DVector::from_vec(vec![0.0, 0.5, -1.0, 2.0]));
    let diag = frechet_distance(
        &ma,
        &DMatrix::from_diagonal(&DVector::from_row_slice(&vx)),
        &mb,
        &DMatrix::from_diagonal(&DVector::from_row_slice(&vy)),
    );
    let oracle = (&ma - &mb).norm_squared() + vx.iter().zip(&vy).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum::<f64>();
    ensure((diag - oracle).abs() < 1e-6, || format!("diagonal FID {diag} vs {oracle}"))?;
    Ok(format!(
        "identical FID {same:.1e}, KID {:.1e}; Gaussian FID off by {:.1e}; KID hand cases 19 and 9.5; diagonal FID off by {:.1e}",
        k.mean,
        (got - closed).abs(),
        (diag - oracle).abs()
    ))
}

fn faithfulness_metrics() -> Outcome {
    let a: Vec<[f64; 3]> = (0..68).map(|i| [i as f64 * 0.125, (i % 7) as f64 * 0.5, -(i as f64) * 0.25]).collect();
    let b: Vec<[f64; 3]> = a.iter().map(|p| [p[0] + 0.75, p[1] + 1.0, p[2]]).collect();
    let shift = lm_l2(&a, &b).map_err(e)?;
    ensure(shift == 1.25, || format!("uniform shift of length 1.25 gives {shift}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let base: Vec<f64> = (0..3 * 32 * 32).map(|_| rng.random_range(0.0..0.9)).collect();
    let x = Planar::new(3, 32, 32, base.clone()).map_err(e)?;
    let y = Planar::new(3, 32, 32, base.iter().map(|v| v + 10.0 / 255.0).collect()).map_err(e)?;
    let m = pixel_metrics(&x, &y).map_err(e)?;
    ensure((m.psnr - 28.13).abs() <= 0.01, || format!("PSNR {}", m.psnr))?;
    let s = ssim(&x, &x).map_err(e)?;
    ensure(s == 1.0, || format!("SSIM(x, x) = {s}"))?;
    Ok(format!("Lm-L2 shift {shift}, PSNR {:.4} dB, SSIM(x, x) {s}", m.psnr))
}

fn toy_config(root: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::toy();
    cfg.set("data.root", &root.display().to_string()).expect("data.root");
    cfg
}

fn pretraining_statistics(data: &Path, scratch: &Path) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let images = Tensor::ones((625, 1, 32, 32), DType::F32, &Device::Cpu).map_err(e)?;
    let (_, grids) = mask_patches(&images, 8, 0.4, &mut rng).map_err(e)?;
    let draws: usize = grids.iter().map(Vec::len).sum();
    let frac = masked_fraction(&grids);
    ensure(draws == 10_000, || format!("{draws} draws"))?;
    ensure((frac - 0.40).abs() <= 0.01, || format!("masked fraction {frac}"))?;

    let cfg = toy_config(data);
    let losses = run_pretrain(&cfg, &uvcgan2::data::Dataset::open(&cfg.data).map_err(e)?, scratch, |_, _| {})
        .map_err(e)?;
    ensure(losses.len() == 200, || format!("{} pretraining steps", losses.len()))?;
    let window = 10;
    let first = losses[..window].iter().sum::<f64>() / window as f64;
    let last = losses[losses.len() - window..].iter().sum::<f64>() / window as f64;
    let fall = 1.0 - last / first;
    ensure(fall >= 0.5, || format!("loss {first:.4} -> {last:.4}, fell {:.1}%", 100.0 * fall))?;
    within(start.elapsed(), 300.0)?;
    Ok(format!(
        "masked fraction {frac:.4}; loss {first:.4} -> {last:.4} (-{:.1}%) in 200 steps; {:.0}s",
        100.0 * fall,
        start.elapsed().as_secs_f64()
    ))
}

fn read_metrics(path: &Path) -> Result<Vec<serde_json::Value>, String> {
    std::fs::read_to_string(path)
        .map_err(e)?
        .lines()
        .map(|l| serde_json::from_str(l).map_err(e))
        .collect()
}

fn field(rec: &serde_json::Value, key: &str) -> f64 {
    rec[key].as_f64().unwrap_or(f64::NAN)
}

fn mean_red(dir: &Path, size: u32) -> Result<f64, String> {
    let files = uvcgan2::data::io::list_images(dir).map_err(e)?;
    let mut total = 0.0;
    for f in &files {
        let t = load_square(f, size).map_err(e)?;
        total += t.get(0).and_then(|r| r.mean_all()).and_then(|m| m.to_scalar::<f32>()).map_err(e)? as f64;
    }
    Ok(total / files.len() as f64)
}

fn toy_end_to_end(scratch: &Path) -> Outcome {
    let start = Instant::now();
    let data = scratch.join("data");
    make_toy_dataset(&data, &ToySpec::default()).map_err(e)?;
    let cfg = toy_config(&data);
    let run = scratch.join("run");
    let ds = uvcgan2::data::Dataset::open(&cfg.data).map_err(e)?;
    let mut trainer = Trainer::new(&cfg).map_err(e)?;
    trainer.run(&ds, &run, |_, _| {}).map_err(e)?;

    let recs = read_metrics(&run.join("metrics.jsonl"))?;
    let cyc = |r: &serde_json::Value| field(r, "loss_cyc_a") + field(r, "loss_cyc_b");
    let window_mean = |lo: f64, hi: f64| {
        let v: Vec<f64> = recs.iter().filter(|r| (lo..hi).contains(&field(r, "iter"))).map(cyc).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let total = cfg.train.total_iters as f64;
    let first = window_mean(1.0, 101.0);
    let last = window_mean(total - 99.0, total + 1.0);
    let fall = 1.0 - last / first;

    let size = cfg.eval.image_size as u32;
    let translated = scratch.join("translated");
    cmd_translate(&run.join("checkpoint.safetensors"), &data.join("testA"), &translated, Direction::AToB, true)
        .map_err(e)?;
    let (red_a, red_b, red_t) = (
        mean_red(&data.join("testA"), size)?,
        mean_red(&data.join("testB"), size)?,
        mean_red(&translated, size)?,
    );
    let shift = (red_a - red_t) * (red_a - red_b).signum();

    let fid_of = |dir: &Path, name: &str| -> Result<f64, String> {
        let args = EvaluateArgs {
            translated: dir.to_path_buf(),
            target: data.join("testB"),
            report: scratch.join(name),
            ..Default::default()
        };
        Ok(cmd_evaluate(&cfg, &args).map_err(e)?.fid)
    };
    let fid_before = fid_of(&data.join("testA"), "before.json")?;
    let fid_after = fid_of(&translated, "after.json")?;
    let gain = 1.0 - fid_after / fid_before;
    let elapsed = start.elapsed();

    let detail = format!(
        "cycle {first:.4} -> {last:.4} (-{:.1}%); red {red_a:.3} -> {red_t:.3} (B {red_b:.3}, shift {shift:.3}); \
         stub FID {fid_before:.3} -> {fid_after:.3} (-{:.1}%); {:.0}s",
        100.0 * fall,
        100.0 * gain,
        elapsed.as_secs_f64()
    );
    ensure(fall > 0.5, || format!("cycle loss fell only {:.1}%: {detail}", 100.0 * fall))?;
    ensure(shift >= 0.15, || format!("red shift {shift:.3} < 0.15: {detail}"))?;
    ensure(gain >= 0.2, || format!("FID improved only {:.1}%: {detail}", 100.0 * gain))?;
    within(elapsed, 1200.0).map_err(|m| format!("{m}: {detail}"))?;
    Ok(detail)
}

fn ablation_smoke(data: &Path, scratch: &Path) -> Outcome {
    let mut cfg = toy_config(data);
    cfg.set("train.total_iters", "50").map_err(e)?;
    let mut parts = Vec::new();
    for t in Ablation::ALL {
        let variant = ablation_variant(&cfg, t);
        let ds = uvcgan2::data::Dataset::open(&variant.data).map_err(e)?;
        let out = scratch.join(t.to_string());
        let mut tr = Trainer::new(&variant).map_err(e)?;
        tr.run(&ds, &out, |_, _| {}).map_err(|err| format!("{t}: {err}"))?;
        ensure(tr.iteration() == 50, || format!("{t} stopped at {}", tr.iteration()))?;
        let recs = read_metrics(&out.join("metrics.jsonl"))?;
        let last = recs.last().ok_or_else(|| format!("{t} wrote no metrics"))?;
        let g = field(last, "loss_gen");
        ensure(g.is_finite(), || format!("{t} final generator loss {g}"))?;
        ensure(out.join("checkpoint.safetensors").is_file(), || format!("{t} wrote no checkpoint"))?;
        parts.push(format!("{t} gen {g:.3}"));
    }
    Ok(format!("50 iterations each: {}", parts.join(", ")))
}

fn determinism(data: &Path, scratch: &Path) -> Outcome {
    let bin = env!("CARGO_BIN_EXE_uvcgan2");
    let mut files = Vec::new();
    for k in 0..2 {
        let out = scratch.join(format!("det{k}"));
        let status = std::process::Command::new(bin)
            .env("UVCGAN2_DETERMINISTIC", "1")
            .env("RUST_LOG", "warn")
            .args(["train", "--preset", "toy", "--set"])
            .arg(format!("data.root={}", data.display()))
            .args(["--set", "train.total_iters=40", "--set", "train.seed=5", "--out"])
            .arg(&out)
            .status()
            .map_err(e)?;
        ensure(status.success(), || format!("run {k} exited with {status}"))?;
        files.push(std::fs::read(out.join("metrics.jsonl")).map_err(e)?);
    }
    ensure(!files[0].is_empty(), || "empty metrics file".into())?;
    ensure(files[0] == files[1], || "metrics files differ".into())?;
    Ok(format!("two 40-iteration runs, {} identical bytes of metrics", files[0].len()))
}

fn main() {
    uvcgan2::runtime::init();
    let scratch = tempfile::tempdir().expect("scratch directory");
    let toy = scratch.path().join("toy");
    let toy_data = toy.join("data");

    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    let mut report = |name: &str, f: &mut dyn FnMut() -> Outcome| {
        if !filters.is_empty() && !filters.iter().any(|p| name.contains(p.as_str())) {
            return;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    };

    report("modulation/demodulation unit suite", &mut modulation_suite);
    report("magnitude preservation", &mut magnitude_preservation);
    report("gradient checks", &mut gradient_checks);
    report("feature cache and batch head", &mut feature_cache_suite);
    report("EMA closed form", &mut ema_closed_form);
    report("spectral norm vs SVD", &mut spectral_norm_oracle);
    report("FID/KID oracles", &mut fid_kid_oracles);
    report("faithfulness metrics", &mut faithfulness_metrics);
    report("toy end-to-end translation", &mut || toy_end_to_end(&toy));
    let toy_data = toy_data.as_path();
    let ready = || -> Result<(), String> {
        if !toy_data.join("trainA").is_dir() {
            make_toy_dataset(toy_data, &ToySpec::default()).map_err(e)?;
        }
        Ok(())
    };
    report("pretraining statistics", &mut || {
        ready()?;
        pretraining_statistics(toy_data, &scratch.path().join("pretrain"))
    });
    report("ablation harness smoke", &mut || {
        ready()?;
        ablation_smoke(toy_data, &scratch.path().join("ablations"))
    });
    report("determinism", &mut || {
        ready()?;
        determinism(toy_data, scratch.path())
    });

    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
