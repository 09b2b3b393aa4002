//! PCA, two-class Fisher LDA and a linear autoencoder trained by full-batch
//! gradient descent.

use crate::error::{Error, Result};
use crate::numerics::linalg::{orthonormalize_columns, solve_spd};
use crate::numerics::matrix::{dot, norm};
use crate::numerics::{eigh_symmetric, principal_angles, pseudoinverse, Matrix, Rng};

#[derive(Debug, Clone)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `dim × m`, orthonormal columns ordered by explained variance.
    pub loadings: Matrix,
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn component(&self, i: usize) -> Vec<f64> {
        self.loadings.column(i)
    }
}

/// Top-`m` principal directions of the rows of `data`.
pub fn fit_pca(data: &Matrix, m: usize) -> Result<PcaModel> {
    let (n, dim) = data.shape();
    if n < 2 {
        return Err(Error::InvalidArgument("PCA needs at least 2 samples".into()));
    }
    if m == 0 || m > dim {
        return Err(Error::InvalidArgument(format!("m = {m} must lie in 1..={dim}")));
    }
    let cov = data.covariance();
    let eig = eigh_symmetric(&cov)?;
    let mut loadings = eig.vectors.columns(0, m);
    // Deterministic sign: largest-magnitude entry of each loading is positive.
    for c in 0..m {
        let col = loadings.column(c);
        let pivot = col.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if pivot < 0.0 {
            loadings.set_column(c, &col.iter().map(|v| -v).collect::<Vec<_>>());
        }
    }
    Ok(PcaModel { mean: data.column_means(), loadings, explained_variance: eig.values[..m].to_vec() })
}

#[derive(Debug, Clone)]
pub struct LdaModel {
    /// Unit-norm projection direction.
    pub w: Vec<f64>,
    pub class_means: [Vec<f64>; 2],
    pub within_scatter: Matrix,
    pub between_scatter: Matrix,
    /// Ridge added to the within-class scatter (0 when it was well conditioned).
    pub ridge: f64,
}

impl LdaModel {
    /// `wᵀ S_B w / wᵀ S_W w`.
    pub fn fisher_quotient(&self, v: &[f64]) -> f64 {
        let sb = dot(v, &self.between_scatter.matvec(v));
        let sw = dot(v, &self.within_scatter.matvec(v));
        sb / sw
    }
}

/// Two-class Fisher discriminant; labels must be exactly `{0, 1}`.
pub fn fit_lda(data: &Matrix, labels: &[usize]) -> Result<LdaModel> {
    let (n, dim) = data.shape();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} samples", labels.len())));
    }
    let idx = |c: usize| -> Vec<usize> { (0..n).filter(|&i| labels[i] == c).collect() };
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::InvalidArgument("LDA supports exactly two classes labeled 0 and 1".into()));
    }
    let (a, b) = (idx(0), idx(1));
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument("each class needs at least 2 samples".into()));
    }
    let xa = data.select_rows(&a);
    let xb = data.select_rows(&b);
    let (ma, mb) = (xa.column_means(), xb.column_means());
    let scatter = |x: &Matrix, m: &[f64]| {
        let c = Matrix::from_fn(x.rows(), dim, |r, k| x[(r, k)] - m[k]);
        c.t_matmul(&c)
    };
    let mut sw = scatter(&xa, &ma).add(&scatter(&xb, &mb));
    crate::numerics::matrix::symmetrize(&mut sw);
    let delta: Vec<f64> = ma.iter().zip(&mb).map(|(x, y)| x - y).collect();
    let scale = norm(&ma).max(norm(&mb)).max(1.0);
    if norm(&delta) <= 1e-12 * scale {
        return Err(Error::InvalidArgument(
            "class means coincide; between-class scatter is zero and the direction is undefined".into(),
        ));
    }
    let sb = Matrix::from_fn(dim, dim, |r, c| delta[r] * delta[c]);

    let eig = eigh_symmetric(&sw)?;
    let max_eig = eig.values[0].max(0.0);
    let min_eig = *eig.values.last().unwrap_or(&0.0);
    let ridge = if min_eig <= 1e-12 * max_eig.max(f64::MIN_POSITIVE) {
        (1e-8 * sw.trace() / dim as f64).max(f64::MIN_POSITIVE)
    } else {
        0.0
    };
    let mut regularized = sw.clone();
    for i in 0..dim {
        regularized[(i, i)] += ridge;
    }
    let raw = solve_spd(&regularized, &delta)?;
    let len = norm(&raw);
    let w = raw.iter().map(|v| v / len).collect();
    Ok(LdaModel { w, class_means: [ma, mb], within_scatter: sw, between_scatter: sb, ridge })
}

/// `n` rows from a Gaussian with axis standard deviations `stds` under a random rotation.
pub fn rotated_gaussian(seed: u64, n: usize, stds: &[f64]) -> Result<Matrix> {
    let dim = stds.len();
    let mut rng = Rng::new(seed);
    let raw = Matrix::from_fn(dim, dim, |_, _| rng.normal());
    let q = orthonormalize_columns(&raw)?;
    let z = Matrix::from_fn(n, dim, |_, c| stds[c] * rng.normal());
    Ok(z.matmul_t(&q))
}

#[derive(Debug, Clone)]
pub struct LinearAutoencoder {
    /// Encoder, `m × dim`.
    pub w1: Matrix,
    /// Decoder, `dim × m`.
    pub w2: Matrix,
    /// Mean removed before encoding.
    pub mean: Vec<f64>,
    /// Mean squared reconstruction error per step (index 0 = before training).
    pub loss_trace: Vec<f64>,
}

impl LinearAutoencoder {
    /// Autoencoder sitting exactly at the PCA solution.
    pub fn from_pca(pca: &PcaModel) -> Self {
        LinearAutoencoder {
            w1: pca.loadings.transpose(),
            w2: pca.loadings.clone(),
            mean: pca.mean.clone(),
            loss_trace: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutoencoderConfig {
    pub m: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Early stop once the per-step loss change drops below this.
    pub min_delta: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self { m: 2, steps: 20_000, lr: 1e-2, seed: 0, min_delta: 1e-12 }
    }
}

/// Mean squared reconstruction error `tr((I−P) C (I−P)ᵀ)` with `C` the
/// second-moment matrix of the centered data (divisor n).
fn reconstruction_loss(projector: &Matrix, second_moment: &Matrix) -> f64 {
    let n = projector.rows();
    let residual = Matrix::identity(n).sub(projector);
    residual.matmul(second_moment).matmul_t(&residual).trace()
}

fn centered_second_moment(data: &Matrix) -> (Vec<f64>, Matrix) {
    let mean = data.column_means();
    let centered = Matrix::from_fn(data.rows(), data.cols(), |r, c| data[(r, c)] - mean[c]);
    let c = centered.t_matmul(&centered).scale(1.0 / data.rows() as f64);
    (mean, c)
}

/// Full-batch gradient descent on `‖X − W2 W1 X‖²_F / n` over centered data.
pub fn train_linear_autoencoder(data: &Matrix, cfg: &AutoencoderConfig) -> Result<LinearAutoencoder> {
    let dim = data.cols();
    if cfg.m == 0 || cfg.m > dim {
        return Err(Error::InvalidArgument(format!("bottleneck m = {} must lie in 1..={dim}", cfg.m)));
    }
    if data.rows() < 2 {
        return Err(Error::InvalidArgument("need at least 2 samples".into()));
    }
    let (mean, c) = centered_second_moment(data);
    let mut rng = Rng::new(cfg.seed);
    let mut w1 = Matrix::from_fn(cfg.m, dim, |_, _| 0.1 * rng.normal());
    let mut w2 = Matrix::from_fn(dim, cfg.m, |_, _| 0.1 * rng.normal());
    let eye = Matrix::identity(dim);
    let initial = reconstruction_loss(&w2.matmul(&w1), &c);
    let mut trace = vec![initial];
    for step in 1..=cfg.steps {
        let residual = eye.sub(&w2.matmul(&w1));
        let rc = residual.matmul(&c);
        // dL/dW2 = −2 (I − W2W1) C W1ᵀ ; dL/dW1 = −2 W2ᵀ (I − W2W1) C
        let g2 = rc.matmul_t(&w1).scale(-2.0);
        let g1 = w2.t_matmul(&rc).scale(-2.0);
        w2.scaled_add_assign(-cfg.lr, &g2);
        w1.scaled_add_assign(-cfg.lr, &g1);
        let loss = reconstruction_loss(&w2.matmul(&w1), &c);
        if !loss.is_finite() || loss > 10.0 * initial.max(f64::MIN_POSITIVE) {
            return Err(Error::Diverged {
                step,
                loss,
                hint: format!("learning rate {} is too large for this data scale; try lr/10", cfg.lr),
            });
        }
        let prev = *trace.last().expect("nonempty");
        trace.push(loss);
        if (prev - loss).abs() < cfg.min_delta {
            break;
        }
    }
    Ok(LinearAutoencoder { w1, w2, mean, loss_trace: trace })
}

#[derive(Debug, Clone)]
pub struct PcaEquivalenceReport {
    /// Principal angles between span(W2) and the PCA span, ascending.
    pub angles: Vec<f64>,
    pub max_angle: f64,
    /// `‖W1 − W2⁺‖_F / ‖W2⁺‖_F`.
    pub pinv_residual: f64,
    /// Relative gap between autoencoder and PCA reconstruction error
    /// (absolute when the PCA error is zero).
    pub error_gap: f64,
    pub ae_error: f64,
    pub pca_error: f64,
}

/// Compares a linear autoencoder with the PCA solution on `data`.
pub fn verify_pca_equivalence(ae: &LinearAutoencoder, pca: &PcaModel, data: &Matrix) -> Result<PcaEquivalenceReport> {
    let (_, c) = centered_second_moment(data);
    let angles = match principal_angles(&ae.w2, &pca.loadings) {
        Ok(a) => a,
        // A collapsed decoder spans nothing; report it as maximally misaligned.
        Err(Error::RankDeficient { .. }) => vec![std::f64::consts::FRAC_PI_2; pca.loadings.cols()],
        Err(e) => return Err(e),
    };
    let max_angle = angles.iter().copied().fold(0.0, f64::max);
    let pinv = pseudoinverse(&ae.w2);
    let pinv_norm = pinv.frobenius_norm();
    let pinv_residual = if pinv_norm > 0.0 {
        ae.w1.sub(&pinv).frobenius_norm() / pinv_norm
    } else {
        f64::INFINITY
    };
    let ae_error = reconstruction_loss(&ae.w2.matmul(&ae.w1), &c);
    let pca_error = reconstruction_loss(&pca.loadings.matmul_t(&pca.loadings), &c);
    let error_gap = if pca_error > 1e-300 { (ae_error - pca_error) / pca_error } else { ae_error - pca_error };
    Ok(PcaEquivalenceReport { angles, max_angle, pinv_residual, error_gap, ae_error, pca_error })
}
