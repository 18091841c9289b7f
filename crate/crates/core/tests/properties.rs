use candle_core::{Device, Tensor};
use image::Rgb32FImage;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uvcgan2::data::augment::{color_jitter, hflip, rotate};
use uvcgan2::evaluation::{fid, kid, KidEstimator};
use uvcgan2::generator::{demodulate, modulate};
use uvcgan2::nn::{spectral_normalize, PowerIteration};
use uvcgan2::pretrain::{cosine_restart_lr, mask_patches};

fn matrix(rows: usize, cols: usize, vals: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, &vals[..rows * cols])
}

fn image(size: u32, vals: &[f32]) -> Rgb32FImage {
    Rgb32FImage::from_raw(size, size, vals[..(size * size * 3) as usize].to_vec()).unwrap()
}

fn in_unit_range(img: &Rgb32FImage) -> bool {
    img.as_raw().iter().all(|v| (0.0..=1.0).contains(v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn demodulated_rows_have_unit_norm(
        w in proptest::collection::vec(-2f64..2.0, 4 * 3 * 9),
        s in proptest::collection::vec(0.1f64..3.0, 3),
    ) {
        let w = Tensor::from_vec(w, (4, 3, 3, 3), &Device::Cpu).unwrap();
        let s = Tensor::from_vec(s, 3, &Device::Cpu).unwrap();
        let d = demodulate(&modulate(&w, &s).unwrap(), 1e-8).unwrap();
        let norms = d.sqr().unwrap().reshape((4, ())).unwrap().sum(1).unwrap().sqrt().unwrap();
        for n in norms.to_vec1::<f64>().unwrap() {
            prop_assert!((1.0 - 1e-4..=1.0).contains(&n), "{}", n);
        }
    }

    #[test]
    fn spectral_normalization_of_scaled_orthogonal_matrix(
        scale in 0.1f64..10.0,
        angle in 0f64..std::f64::consts::TAU,
    ) {
        let (c, s) = (angle.cos(), angle.sin());
        let w = Tensor::new(&[[c * scale, -s * scale], [s * scale, c * scale]], &Device::Cpu).unwrap();
        let mut state = PowerIteration::new(
            Tensor::new(&[1.0f64, 0.3], &Device::Cpu).unwrap(),
            Tensor::new(&[0.2f64, 1.0], &Device::Cpu).unwrap(),
        ).unwrap();
        let wn = spectral_normalize(&w.unsqueeze(2).unwrap(), &mut state, 5).unwrap();
        let got = wn.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for (g, want) in got.iter().zip([c, -s, s, c]) {
            prop_assert!((g - want).abs() < 1e-9);
        }
    }

    #[test]
    fn spectral_norm_of_diagonal_is_its_largest_entry(a in 1.5f64..10.0, b in 0.0f64..1.0) {
        let w = Tensor::new(&[[a, 0.0], [0.0, b]], &Device::Cpu).unwrap();
        let mut state = PowerIteration::new(
            Tensor::new(&[1.0f64, 1.0], &Device::Cpu).unwrap(),
            Tensor::new(&[1.0f64, 1.0], &Device::Cpu).unwrap(),
        ).unwrap();
        let wn = spectral_normalize(&w, &mut state, 200).unwrap();
        let top = wn.get(0).unwrap().get(0).unwrap().to_scalar::<f64>().unwrap();
        prop_assert!((top - 1.0).abs() < 1e-6, "{}", top);
    }

    #[test]
    fn fid_is_invariant_to_rotation_and_translation(
        vals in proptest::collection::vec(-1f64..1.0, 2 * 30 * 3),
        angle in 0f64..std::f64::consts::TAU,
        shift in proptest::collection::vec(-5f64..5.0, 3),
    ) {
        let x = matrix(30, 3, &vals);
        let y = matrix(30, 3, &vals[90..]);
        let (c, s) = (angle.cos(), angle.sin());
        let r = DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]);
        let t = DMatrix::from_fn(30, 3, |_, j| shift[j]);
        let base = fid(&x, &y).unwrap();
        let moved = fid(&(&x * &r + &t), &(&y * &r + &t)).unwrap();
        prop_assert!((base - moved).abs() < 1e-6 * base.max(1.0), "{} vs {}", base, moved);
        prop_assert!(base >= -1e-9);
    }

    #[test]
    fn kid_of_a_set_with_itself_is_zero(vals in proptest::collection::vec(-1f64..1.0, 20 * 4), seed in 0u64..100) {
        let x = matrix(20, 4, &vals);
        let r = kid(&x, &x, 8, 10, KidEstimator::PairedU, seed).unwrap();
        prop_assert!(r.mean.abs() < 1e-9);
    }

    #[test]
    fn kid_is_symmetric(vals in proptest::collection::vec(-1f64..1.0, 2 * 12 * 3), seed in 0u64..100) {
        let x = matrix(12, 3, &vals);
        let y = matrix(12, 3, &vals[36..]);
        let a = kid(&x, &y, 12, 1, KidEstimator::Standard, seed).unwrap();
        let b = kid(&y, &x, 12, 1, KidEstimator::Standard, seed).unwrap();
        prop_assert!((a.mean - b.mean).abs() < 1e-12);
    }

    #[test]
    fn masked_patches_are_zero_and_others_untouched(seed in 0u64..1000, p in 0f64..=1.0) {
        let x = Tensor::ones((2, 3, 16, 16), candle_core::DType::F32, &Device::Cpu).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (masked, grids) = mask_patches(&x, 4, p, &mut rng).unwrap();
        let v = masked.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for (b, grid) in grids.iter().enumerate() {
            prop_assert_eq!(grid.len(), 16);
            for c in 0..3 {
                for y in 0..16 {
                    for x in 0..16 {
                        let want = if grid[(y / 4) * 4 + x / 4] { 0.0 } else { 1.0 };
                        prop_assert_eq!(v[((b * 3 + c) * 16 + y) * 16 + x], want);
                    }
                }
            }
        }
    }

    #[test]
    fn augmentations_stay_in_range(vals in proptest::collection::vec(0f32..=1.0, 8 * 8 * 3), deg in -30f32..30.0, seed in 0u64..100) {
        let img = image(8, &vals);
        prop_assert!(in_unit_range(&rotate(&img, deg)));
        prop_assert!(in_unit_range(&color_jitter(&img, 0.5, &mut ChaCha8Rng::seed_from_u64(seed))));
        prop_assert_eq!(hflip(&hflip(&img)), img);
    }

    #[test]
    fn cosine_restart_lr_is_bounded(step in 0u64..10_000, total in 1u64..10_000, cycles in 1usize..8) {
        let lr = cosine_restart_lr(step, total, cycles, 0.01);
        prop_assert!((0.0..=0.01).contains(&lr));
    }
}

#[test]
fn mask_fraction_passes_a_chi_square_test() {
    let x = Tensor::ones((100, 1, 32, 32), candle_core::DType::F32, &Device::Cpu).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (_, grids) = mask_patches(&x, 8, 0.4, &mut rng).unwrap();
    let n = grids.iter().map(Vec::len).sum::<usize>() as f64;
    let masked = grids.iter().flatten().filter(|&&m| m).count() as f64;
    let (e1, e0) = (0.4 * n, 0.6 * n);
    let chi2 = (masked - e1).powi(2) / e1 + (n - masked - e0).powi(2) / e0;
    // 99.9% quantile of chi-square with one degree of freedom.
    assert!(chi2 < 10.83, "chi2 {chi2}");
}
