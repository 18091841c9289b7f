use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Sample mean and unbiased covariance of the rows of `x`.
pub fn mean_cov(x: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("features contain non-finite values".into()));
    }
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    Ok((mean, cov))
}

fn symmetric(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Square root of a symmetric positive semi-definite matrix; negative
/// eigenvalues from rounding are clamped to zero.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetric(m));
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// `Tr((Sx Sy)^{1/2})`, computed as `Tr((Sx^{1/2} Sy Sx^{1/2})^{1/2})`.
pub fn trace_sqrt_product(sx: &DMatrix<f64>, sy: &DMatrix<f64>) -> f64 {
    let r = sqrtm_psd(sx);
    let inner = symmetric(&(&r * sy * &r));
    SymmetricEigen::new(inner).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum()
}

/// Frechet distance between Gaussians with the given statistics.
pub fn frechet_distance(mx: &DVector<f64>, sx: &DMatrix<f64>, my: &DVector<f64>, sy: &DMatrix<f64>) -> f64 {
    let dm = (mx - my).norm_squared();
    let v = dm + sx.trace() + sy.trace() - 2.0 * trace_sqrt_product(sx, sy);
    v.max(0.0)
}

/// FID between two feature sets (rows are samples).
pub fn fid(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    if x.ncols() != y.ncols() {
        return Err(Error::InvalidArgument(format!(
            "feature dimensions differ: {} vs {}",
            x.ncols(),
            y.ncols()
        )));
    }
    let (mx, sx) = mean_cov(x)?;
    let (my, sy) = mean_cov(y)?;
    Ok(frechet_distance(&mx, &sx, &my, &sy))
}
