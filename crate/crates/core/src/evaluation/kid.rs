use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Which unbiased MMD^2 estimator to average over subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KidEstimator {
    /// `1/(m(m-1)) sum_{i != j} h(i, j)` with
    /// `h(i, j) = k(x_i, x_j) + k(y_i, y_j) - k(x_i, y_j) - k(x_j, y_i)`.
    /// Exactly zero when both subsets are the same samples.
    #[default]
    PairedU,
    /// Within-set terms over `i != j`, cross term over all `m^2` pairs.
    Standard,
}

impl fmt::Display for KidEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KidEstimator::PairedU => "paired_u",
            KidEstimator::Standard => "standard",
        })
    }
}

impl FromStr for KidEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paired_u" => Ok(KidEstimator::PairedU),
            "standard" => Ok(KidEstimator::Standard),
            _ => Err(Error::Config(format!("unknown kid estimator {s:?} (paired_u, standard)"))),
        }
    }
}

/// Cubic polynomial kernel `(<u, v> / d + 1)^3` between all rows.
pub fn poly_kernel(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let d = x.ncols() as f64;
    (x * y.transpose()).map(|v| (v / d + 1.0).powi(3))
}

/// Unbiased MMD^2 between two equally sized sample sets.
pub fn mmd2(x: &DMatrix<f64>, y: &DMatrix<f64>, estimator: KidEstimator) -> Result<f64> {
    let m = x.nrows();
    if m < 2 || y.nrows() != m {
        return Err(Error::InvalidArgument(format!(
            "mmd needs two sets of equal size >= 2, got {} and {}",
            m,
            y.nrows()
        )));
    }
    let kxx = poly_kernel(x, x);
    let kyy = poly_kernel(y, y);
    let kxy = poly_kernel(x, y);
    let off_diag = |k: &DMatrix<f64>| k.sum() - k.trace();
    let mf = m as f64;
    Ok(match estimator {
        KidEstimator::PairedU => {
            // sum_{i != j} k(x_i, y_j) counted once for each ordering
            (off_diag(&kxx) + off_diag(&kyy) - 2.0 * off_diag(&kxy)) / (mf * (mf - 1.0))
        }
        KidEstimator::Standard => {
            (off_diag(&kxx) + off_diag(&kyy)) / (mf * (mf - 1.0)) - 2.0 * kxy.sum() / (mf * mf)
        }
    })
}

fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KidResult {
    pub mean: f64,
    /// Population standard deviation over subsets.
    pub std: f64,
}

/// KID: MMD^2 averaged over `n_subsets` random subsets of `subset_size`
/// rows. When both sets have the same size the same row indices are used
/// for both sets.
pub fn kid(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    subset_size: usize,
    n_subsets: usize,
    estimator: KidEstimator,
    seed: u64,
) -> Result<KidResult> {
    if x.ncols() != y.ncols() {
        return Err(Error::InvalidArgument("feature dimensions differ".into()));
    }
    if subset_size < 2 || subset_size > x.nrows() || subset_size > y.nrows() {
        return Err(Error::InvalidArgument(format!(
            "kid subset size {subset_size} must be in [2, {}]",
            x.nrows().min(y.nrows())
        )));
    }
    if n_subsets == 0 {
        return Err(Error::InvalidArgument("kid needs at least one subset".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("features contain non-finite values".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vals = Vec::with_capacity(n_subsets);
    for _ in 0..n_subsets {
        let ix = sample(&mut rng, x.nrows(), subset_size).into_vec();
        let iy = if x.nrows() == y.nrows() {
            ix.clone()
        } else {
            sample(&mut rng, y.nrows(), subset_size).into_vec()
        };
        vals.push(mmd2(&select_rows(x, &ix), &select_rows(y, &iy), estimator)?);
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(KidResult { mean, std: var.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| r.random_range(-1.0..1.0))
    }

    #[test]
    fn identical_sets_are_exactly_zero() {
        let x = random(30, 4, 0);
        let r = kid(&x, &x, 10, 20, KidEstimator::PairedU, 1).unwrap();
        assert_eq!(r.mean, 0.0);
        assert_eq!(r.std, 0.0);
        let s = kid(&x, &x, 10, 20, KidEstimator::Standard, 1).unwrap();
        assert!(s.mean <= 0.0);
    }

    #[test]
    fn sample_order_does_not_matter_for_full_subsets() {
        let x = random(6, 3, 2);
        let y = random(6, 3, 3);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let xp = select_rows(&x, &perm);
        let yp = select_rows(&y, &perm);
        for est in [KidEstimator::PairedU, KidEstimator::Standard] {
            let a = mmd2(&x, &y, est).unwrap();
            let b = mmd2(&xp, &yp, est).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_oversized_subsets() {
        let x = random(5, 2, 0);
        assert!(kid(&x, &x, 6, 1, KidEstimator::PairedU, 0).is_err());
        assert!(kid(&x, &x, 1, 1, KidEstimator::PairedU, 0).is_err());
    }
}
