//! Fréchet distance between Gaussian fits of feature sets, and toy-FID.

use crate::data::ImageGrid;
use crate::encoders::PatchEncoder;
use crate::error::{Error, Result};
use crate::numerics::matrix::symmetrize;
use crate::numerics::{eigh_symmetric, matrix_sqrt_psd, Matrix, Rng};
use crate::par;

/// Shrinkage weight toward the diagonal for small samples.
pub const SHRINKAGE: f64 = 0.05;
/// Sample counts below this (or below `dim + 1`) trigger shrinkage.
pub const MIN_FULL_RANK_COUNT: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct FrechetStats {
    pub mean: Vec<f64>,
    pub cov: Matrix,
    pub count: usize,
}

impl FrechetStats {
    /// Mean and unbiased covariance of the rows of `features`.
    pub fn from_features(features: &Matrix) -> Result<Self> {
        let (n, d) = features.shape();
        if n < 2 || d == 0 {
            return Err(Error::InvalidArgument(format!("need at least 2 feature rows, got {n}")));
        }
        if !features.is_finite() {
            return Err(Error::InvalidArgument("non-finite features".into()));
        }
        let mut cov = features.covariance();
        if n < MIN_FULL_RANK_COUNT.max(d + 1) {
            cov = Matrix::from_fn(d, d, |r, c| if r == c { cov[(r, c)] } else { (1.0 - SHRINKAGE) * cov[(r, c)] });
        }
        Ok(Self { mean: features.column_means(), cov, count: n })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `‖μa − μb‖² + tr(Σa + Σb − 2 (Σa Σb)^½)`, clamped at zero.
pub fn frechet_distance(a: &FrechetStats, b: &FrechetStats) -> Result<f64> {
    if a.dim() != b.dim() || a.cov.shape() != (a.dim(), a.dim()) || b.cov.shape() != (b.dim(), b.dim()) {
        return Err(Error::Shape(format!("stats of dimension {} and {}", a.dim(), b.dim())));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    // tr (Σa Σb)^½ = tr (Σa^½ Σb Σa^½)^½, whose argument is symmetric PSD.
    let sa = matrix_sqrt_psd(&a.cov)?;
    let mut m = sa.matmul(&b.cov).matmul(&sa);
    symmetrize(&mut m);
    let cross: f64 = eigh_symmetric(&m)?.values.iter().map(|&l| l.max(0.0).sqrt()).sum();
    let d = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    if d < -1e-8 * (1.0 + a.cov.trace() + b.cov.trace()) {
        return Err(Error::InvalidArgument(format!("Fréchet distance {d:.3e} is negative beyond tolerance")));
    }
    Ok(d.max(0.0))
}

/// Mean-pooled default-tap features, one row per image.
pub fn pooled_features(images: &[ImageGrid], encoder: &PatchEncoder) -> Result<Matrix> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("empty image set".into()));
    }
    let rows = par::map(images, |img| encoder.encode(img, None).map(|g| g.mean_pool()))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(&rows)
}

pub fn toy_fid(real: &[ImageGrid], generated: &[ImageGrid], encoder: &PatchEncoder) -> Result<f64> {
    let a = FrechetStats::from_features(&pooled_features(real, encoder)?)?;
    let b = FrechetStats::from_features(&pooled_features(generated, encoder)?)?;
    frechet_distance(&a, &b)
}

/// Toy-FID between two random disjoint halves of `real`: the metric's sampling floor.
pub fn split_half_floor(real: &[ImageGrid], encoder: &PatchEncoder, seed: u64) -> Result<f64> {
    if real.len() < 4 {
        return Err(Error::InvalidArgument("split-half floor needs at least 4 images".into()));
    }
    let mut idx: Vec<usize> = (0..real.len()).collect();
    Rng::new(seed).shuffle(&mut idx);
    let half = real.len() / 2;
    let pick = |ids: &[usize]| ids.iter().map(|&i| real[i].clone()).collect::<Vec<_>>();
    toy_fid(&pick(&idx[..half]), &pick(&idx[half..2 * half]), encoder)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mean: f64, var: f64) -> FrechetStats {
        FrechetStats { mean: vec![mean], cov: Matrix::filled(1, 1, var), count: 100 }
    }

    #[test]
    fn one_dimensional_closed_form() {
        let d = frechet_distance(&stats(0.0, 1.0), &stats(1.0, 1.0)).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        let d = frechet_distance(&stats(0.0, 1.0), &stats(0.0, 4.0)).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_stats_give_zero() {
        let x = Matrix::from_fn(60, 3, |r, c| ((r * 7 + c * 3) % 11) as f64);
        let s = FrechetStats::from_features(&x).unwrap();
        assert!(frechet_distance(&s, &s).unwrap() < 1e-9);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = stats(0.0, 1.0);
        let b = FrechetStats { mean: vec![0.0, 0.0], cov: Matrix::identity(2), count: 10 };
        assert!(frechet_distance(&a, &b).is_err());
    }
}
