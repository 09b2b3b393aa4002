//! K-Means codebook fitting: k-means++ seeding followed by Lloyd iterations.
//!
//! Assignment runs in parallel over points; every reduction (inertia, centroid
//! sums) accumulates in point-index order so the fit is bit-identical with and
//! without the `parallel` feature.

use serde::{Deserialize, Serialize};

use super::codebook::{Codebook, FitMeta};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::par;

const ASSIGN_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once the largest centroid displacement falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { k: 64, max_iters: 100, tol: 1e-6, seed: 0 }
    }
}

/// Fitted codebook plus the per-iteration objective.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub codebook: Codebook,
    /// Inertia after each assignment step; the last entry matches the stored codebook.
    pub inertia_trace: Vec<f64>,
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid (lowest index on ties) and the squared distance.
#[inline]
pub(crate) fn nearest(centroids: &[f64], dim: usize, point: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(points: &[f64], dim: usize, centroids: &[f64]) -> Vec<(usize, f64)> {
    let n = points.len() / dim;
    let mut out = vec![(0usize, 0.0f64); n];
    par::for_each_chunk_mut(&mut out, ASSIGN_CHUNK, |start, chunk| {
        for (j, slot) in chunk.iter_mut().enumerate() {
            let i = start + j;
            *slot = nearest(centroids, dim, &points[i * dim..(i + 1) * dim]);
        }
    });
    out
}

fn plus_plus_init(points: &[f64], dim: usize, k: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    let n = points.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.below(n);
    centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = (0..n)
        .map(|i| squared_distance(&points[i * dim..(i + 1) * dim], &centroids[..dim]))
        .collect();
    for c in 1..k {
        let Some(next) = rng.weighted_index(&d2) else {
            return Err(Error::InvalidArgument(format!(
                "sample has only {c} distinct points, fewer than K = {k}"
            )));
        };
        let new = points[next * dim..(next + 1) * dim].to_vec();
        for (i, slot) in d2.iter_mut().enumerate() {
            *slot = slot.min(squared_distance(&points[i * dim..(i + 1) * dim], &new));
        }
        centroids.extend_from_slice(&new);
    }
    Ok(centroids)
}

/// Fits a `k`-entry codebook to `points` (`n × dim`, row-major).
pub fn kmeans_fit(points: &[f32], dim: usize, cfg: &KMeansConfig) -> Result<KMeansFit> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(Error::Shape(format!("{} values do not form rows of width {dim}", points.len())));
    }
    let n = points.len() / dim;
    if cfg.k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if cfg.k > n {
        return Err(Error::InvalidArgument(format!("K = {} exceeds sample size {n}", cfg.k)));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("features contain NaN or infinite values".into()));
    }
    let pts: Vec<f64> = points.iter().map(|&v| v as f64).collect();
    let k = cfg.k;
    let mut rng = Rng::new(cfg.seed);
    let mut centroids = plus_plus_init(&pts, dim, k, &mut rng)?;
    let mut trace = Vec::new();
    let mut iterations = 0;

    let mut assignment = assign(&pts, dim, &centroids);
    trace.push(assignment.iter().map(|a| a.1).sum());
    for _ in 0..cfg.max_iters {
        iterations += 1;
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &(c, _)) in assignment.iter().enumerate() {
            counts[c] += 1;
            for (s, p) in sums[c * dim..(c + 1) * dim].iter_mut().zip(&pts[i * dim..(i + 1) * dim]) {
                *s += p;
            }
        }
        let mut updated = centroids.clone();
        let mut taken: Vec<usize> = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                for (u, s) in updated[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *u = s / counts[c] as f64;
                }
            } else {
                // Empty cluster: move it onto the point farthest from its own centroid.
                let far = assignment
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken.contains(i))
                    .fold((0usize, f64::NEG_INFINITY), |best, (i, a)| if a.1 > best.1 { (i, a.1) } else { best });
                taken.push(far.0);
                updated[c * dim..(c + 1) * dim].copy_from_slice(&pts[far.0 * dim..(far.0 + 1) * dim]);
            }
        }
        let shift = (0..k)
            .map(|c| squared_distance(&centroids[c * dim..(c + 1) * dim], &updated[c * dim..(c + 1) * dim]).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        assignment = assign(&pts, dim, &centroids);
        trace.push(assignment.iter().map(|a| a.1).sum());
        if shift < cfg.tol {
            break;
        }
    }

    let stored: Vec<f32> = centroids.iter().map(|&v| v as f32).collect();
    let rounded: Vec<f64> = stored.iter().map(|&v| v as f64).collect();
    let inertia: f64 = assign(&pts, dim, &rounded).iter().map(|a| a.1).sum();
    let meta = FitMeta { seed: cfg.seed, iterations, inertia, subset_fraction: 1.0, sample_count: n };
    let codebook = Codebook::new(k, dim, stored, meta)?;
    Ok(KMeansFit { codebook, inertia_trace: trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Best 2-partition of 1D points by exhaustive enumeration.
    fn exhaustive_two_means(points: &[f64]) -> (f64, [f64; 2]) {
        let n = points.len();
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for mask in 1..(1u32 << n) - 1 {
            let (a, b): (Vec<f64>, Vec<f64>) = (0..n).map(|i| (i, points[i])).fold(
                (vec![], vec![]),
                |(mut a, mut b), (i, p)| {
                    if mask & (1 << i) != 0 {
                        a.push(p)
                    } else {
                        b.push(p)
                    }
                    (a, b)
                },
            );
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let (ma, mb) = (mean(&a), mean(&b));
            let cost: f64 = a.iter().map(|p| (p - ma).powi(2)).sum::<f64>() + b.iter().map(|p| (p - mb).powi(2)).sum::<f64>();
            if cost < best.0 {
                let mut c = [ma, mb];
                c.sort_by(f64::total_cmp);
                best = (cost, c);
            }
        }
        best
    }

    #[test]
    fn one_dimensional_optimum_matches_enumeration() {
        let pts = [0.0, 1.0, 10.0, 11.0];
        let (cost, centers) = exhaustive_two_means(&pts);
        assert_eq!(cost, 1.0);
        assert_eq!(centers, [0.5, 10.5]);
        for seed in 0..20 {
            let fit = kmeans_fit(&[0.0, 1.0, 10.0, 11.0], 1, &KMeansConfig { k: 2, max_iters: 50, tol: 0.0, seed }).unwrap();
            let mut c: Vec<f64> = fit.codebook.centroids().iter().map(|&v| v as f64).collect();
            c.sort_by(f64::total_cmp);
            assert_eq!(c, centers.to_vec());
            assert_eq!(fit.codebook.meta().inertia, cost);
        }
    }

    #[test]
    fn k_equals_distinct_points() {
        let pts = [0.0f32, 0.0, 1.0, 0.0, 0.0, 2.0, 3.0, 3.0];
        let fit = kmeans_fit(&pts, 2, &KMeansConfig { k: 4, max_iters: 10, tol: 0.0, seed: 3 }).unwrap();
        assert_eq!(fit.codebook.meta().inertia, 0.0);
        let mut got: Vec<[f32; 2]> = fit.codebook.centroids().chunks(2).map(|c| [c[0], c[1]]).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, vec![[0.0, 0.0], [0.0, 2.0], [1.0, 0.0], [3.0, 3.0]]);
    }

    #[test]
    fn single_cluster_is_mean() {
        let pts = [1.0f32, 2.0, 3.0, 6.0];
        let fit = kmeans_fit(&pts, 2, &KMeansConfig { k: 1, max_iters: 10, tol: 0.0, seed: 0 }).unwrap();
        assert_eq!(fit.codebook.centroids(), &[2.0, 4.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = KMeansConfig { k: 3, max_iters: 5, tol: 0.0, seed: 0 };
        assert!(kmeans_fit(&[0.0, 1.0], 1, &cfg).is_err());
        assert!(kmeans_fit(&[0.0, f32::NAN, 1.0, 2.0], 1, &cfg).is_err());
        assert!(kmeans_fit(&[1.0, 1.0, 1.0, 1.0], 1, &cfg).is_err());
        assert!(kmeans_fit(&[0.0, 1.0, 2.0], 2, &cfg).is_err());
    }

    #[test]
    fn many_clusters_stay_monotone() {
        let mut rng = Rng::new(4);
        let pts: Vec<f32> = (0..200).map(|_| rng.normal() as f32).collect();
        let fit = kmeans_fit(&pts, 2, &KMeansConfig { k: 16, max_iters: 100, tol: 0.0, seed: 1 }).unwrap();
        assert!(fit.inertia_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }
}
