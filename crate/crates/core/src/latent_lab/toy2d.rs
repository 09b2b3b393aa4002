//! Two-Gaussian toy problem and accuracy of 1D projections under input noise.

use serde::{Deserialize, Serialize};

use super::contrastive::{train_infonce_linear, InfoNceConfig};
use super::linear::{fit_lda, fit_pca};
use crate::error::{Error, Result};
use crate::numerics::matrix::{dot, norm};
use crate::numerics::{matrix_sqrt_psd, Matrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoGaussianSpec {
    pub means: [[f64; 2]; 2],
    pub covariances: [[[f64; 2]; 2]; 2],
    pub n_per_class: usize,
}

impl Default for TwoGaussianSpec {
    fn default() -> Self {
        let cov = [[9.0, 0.0], [0.0, 0.25]];
        Self { means: [[0.0, 1.0], [0.0, -1.0]], covariances: [cov, cov], n_per_class: 500 }
    }
}

#[derive(Debug, Clone)]
pub struct LabeledPoints {
    /// One sample per row.
    pub x: Matrix,
    pub labels: Vec<usize>,
}

/// `n_per_class` draws from each of two Gaussians; class 0 rows first.
pub fn make_two_gaussians(spec: &TwoGaussianSpec, seed: u64) -> Result<LabeledPoints> {
    let mut roots = Vec::with_capacity(2);
    for cov in &spec.covariances {
        let m = Matrix::from_rows(&[cov[0].to_vec(), cov[1].to_vec()])?;
        roots.push(matrix_sqrt_psd(&m)?);
    }
    let mut rng = Rng::new(seed);
    let n = spec.n_per_class;
    let mut x = Matrix::zeros(2 * n, 2);
    let mut labels = Vec::with_capacity(2 * n);
    for class in 0..2 {
        for i in 0..n {
            let z = [rng.normal(), rng.normal()];
            let s = roots[class].matvec(&z);
            let row = x.row_mut(class * n + i);
            row[0] = spec.means[class][0] + s[0];
            row[1] = spec.means[class][1] + s[1];
            labels.push(class);
        }
    }
    Ok(LabeledPoints { x, labels })
}

/// A named unit direction in input space.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub name: String,
    pub direction: Vec<f64>,
}

impl Projector {
    pub fn new(name: impl Into<String>, direction: Vec<f64>) -> Result<Self> {
        let n = norm(&direction);
        if !(n > 0.0) {
            return Err(Error::InvalidArgument("projection direction must be nonzero".into()));
        }
        Ok(Self { name: name.into(), direction: direction.iter().map(|v| v / n).collect() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyRow {
    pub sigma: f64,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyCurve {
    pub method: String,
    pub rows: Vec<AccuracyRow>,
    /// `(sigma, mean accuracy over seeds)` in grid order.
    pub mean: Vec<(f64, f64)>,
}

/// Threshold at the midpoint of the projected clean class means.
struct MidpointClassifier {
    threshold: f64,
    class1_above: bool,
}

impl MidpointClassifier {
    fn fit(proj: &[f64], labels: &[usize]) -> Self {
        let mut sums = [0.0; 2];
        let mut counts = [0usize; 2];
        for (&p, &l) in proj.iter().zip(labels) {
            sums[l.min(1)] += p;
            counts[l.min(1)] += 1;
        }
        let m0 = sums[0] / counts[0].max(1) as f64;
        let m1 = sums[1] / counts[1].max(1) as f64;
        Self { threshold: 0.5 * (m0 + m1), class1_above: m1 > m0 }
    }

    fn predict(&self, p: f64) -> usize {
        usize::from((p > self.threshold) == self.class1_above)
    }
}

/// Stream used for the noise draw of grid point `sigma_index`; shared across
/// projectors so methods see identical perturbations.
fn noise_rng(seed: u64, sigma_index: usize) -> Rng {
    Rng::new(seed).split(sigma_index as u64)
}

/// Accuracy of a classifier fit on clean projections, applied to projections
/// of `data + N(0, σ²I)`.
pub fn noise_robust_accuracy(
    projector: &Projector,
    data: &Matrix,
    labels: &[usize],
    noise_sigmas: &[f64],
    seeds: &[u64],
) -> Result<AccuracyCurve> {
    let (n, dim) = data.shape();
    if labels.len() != n || projector.direction.len() != dim {
        return Err(Error::Shape("data, labels and projector disagree".into()));
    }
    if noise_sigmas.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::InvalidArgument("noise sigmas must be >= 0".into()));
    }
    let clean: Vec<f64> = (0..n).map(|i| dot(data.row(i), &projector.direction)).collect();
    let clf = MidpointClassifier::fit(&clean, labels);
    let mut rows = Vec::new();
    let mut mean = Vec::new();
    for (si, &sigma) in noise_sigmas.iter().enumerate() {
        let mut total = 0.0;
        for &seed in seeds {
            let mut rng = noise_rng(seed, si);
            let mut noisy = vec![0.0; dim];
            let mut correct = 0usize;
            for i in 0..n {
                for (c, v) in noisy.iter_mut().enumerate() {
                    *v = data[(i, c)] + sigma * rng.normal();
                }
                if clf.predict(dot(&noisy, &projector.direction)) == labels[i] {
                    correct += 1;
                }
            }
            let accuracy = correct as f64 / n as f64;
            total += accuracy;
            rows.push(AccuracyRow { sigma, seed, accuracy });
        }
        mean.push((sigma, total / seeds.len().max(1) as f64));
    }
    Ok(AccuracyCurve { method: projector.name.clone(), rows, mean })
}

/// Noise grid used for the projection comparison.
pub const DEFAULT_NOISE_SIGMAS: [f64; 7] = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

/// PCA, LDA and InfoNCE directions on one dataset, with alignment statistics.
#[derive(Debug, Clone)]
pub struct ProjectionSet {
    pub pca: Projector,
    pub lda: Projector,
    pub infonce: Projector,
    pub infonce_cos_lda: f64,
    pub infonce_cos_pca: f64,
}

pub fn fit_projections(points: &LabeledPoints, nce: &InfoNceConfig, seed: u64) -> Result<ProjectionSet> {
    let pca = fit_pca(&points.x, 1)?;
    let lda = fit_lda(&points.x, &points.labels)?;
    let enc = train_infonce_linear(&points.x, &points.labels, nce, seed)?;
    let pc1 = pca.component(0);
    let dir = enc.direction();
    Ok(ProjectionSet {
        infonce_cos_lda: dot(&dir, &lda.w).abs(),
        infonce_cos_pca: dot(&dir, &pc1).abs(),
        pca: Projector::new("pca", pc1)?,
        lda: Projector::new("lda", lda.w)?,
        infonce: Projector::new("infonce", dir)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_covariance_collapses_to_means() {
        let spec = TwoGaussianSpec { covariances: [[[0.0; 2]; 2]; 2], n_per_class: 5, ..Default::default() };
        let p = make_two_gaussians(&spec, 1).unwrap();
        for r in 0..10 {
            assert_eq!(p.x.row(r), &spec.means[p.labels[r]]);
        }
    }

    #[test]
    fn empirical_mean_and_determinism() {
        let spec = TwoGaussianSpec { n_per_class: 10_000, ..Default::default() };
        let a = make_two_gaussians(&spec, 7).unwrap();
        let b = make_two_gaussians(&spec, 7).unwrap();
        assert_eq!(a.x, b.x);
        let m = a.x.select_rows(&(0..10_000).collect::<Vec<_>>()).column_means();
        assert!((m[0] - 0.0).abs() < 0.05 && (m[1] - 1.0).abs() < 0.05);
    }

    #[test]
    fn non_psd_covariance_rejected() {
        let spec = TwoGaussianSpec { covariances: [[[1.0, 0.0], [0.0, -1.0]]; 2], ..Default::default() };
        assert!(make_two_gaussians(&spec, 0).is_err());
    }

    #[test]
    fn accuracy_extremes() {
        let spec = TwoGaussianSpec {
            means: [[0.0, 5.0], [0.0, -5.0]],
            covariances: [[[1.0, 0.0], [0.0, 0.01]]; 2],
            n_per_class: 200,
        };
        let p = make_two_gaussians(&spec, 3).unwrap();
        let proj = Projector::new("e2", vec![0.0, 1.0]).unwrap();
        let seeds: Vec<u64> = (0..5).collect();
        let curve = noise_robust_accuracy(&proj, &p.x, &p.labels, &[0.0, 1e6], &seeds).unwrap();
        assert_eq!(curve.mean[0].1, 1.0);
        assert!((curve.mean[1].1 - 0.5).abs() < 0.05);
    }
}
