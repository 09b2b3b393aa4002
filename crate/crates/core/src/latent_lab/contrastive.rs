//! InfoNCE on unit embeddings: the loss, the Jensen lower bound on its
//! negative term, and a linear encoder trained with same-class positives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::matrix::dot;
use crate::numerics::{eigh_symmetric, Adam, Matrix, Rng, Tape};

const UNIT_TOL: f64 = 1e-6;

fn check_unit_rows(embeddings: &Matrix) -> Result<()> {
    for r in 0..embeddings.rows() {
        let n = dot(embeddings.row(r), embeddings.row(r)).sqrt();
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidArgument(format!("embedding {r} has norm {n}, expected 1")));
        }
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("temperature must be positive and finite, got {tau}")));
    }
    Ok(())
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean over `positive_pairs (i, j)` of `−sᵢⱼ/τ + log Σ_{k≠i} exp(sᵢₖ/τ)`.
pub fn infonce_loss(embeddings: &Matrix, positive_pairs: &[(usize, usize)], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    check_unit_rows(embeddings)?;
    let m = embeddings.rows();
    if positive_pairs.is_empty() {
        return Err(Error::InvalidArgument("no positive pairs".into()));
    }
    let sim = embeddings.matmul_t(embeddings);
    let mut total = 0.0;
    for &(i, j) in positive_pairs {
        if i >= m || j >= m || i == j {
            return Err(Error::InvalidArgument(format!("invalid positive pair ({i}, {j}) for {m} embeddings")));
        }
        let lse = log_sum_exp((0..m).filter(|&k| k != i).map(|k| sim[(i, k)] / tau));
        total += lse - sim[(i, j)] / tau;
    }
    Ok(total / positive_pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `(1/m)Σᵢ log((1/m)Σⱼ exp(hᵢ·hⱼ/τ))` against `(1/(τm²))ΣᵢΣⱼ hᵢ·hⱼ`.
pub fn infonce_bound_check(embeddings: &Matrix, tau: f64) -> Result<BoundCheck> {
    check_tau(tau)?;
    check_unit_rows(embeddings)?;
    let m = embeddings.rows();
    if m == 0 {
        return Err(Error::InvalidArgument("empty embedding set".into()));
    }
    let sim = embeddings.matmul_t(embeddings);
    let mf = m as f64;
    let lhs = (0..m)
        .map(|i| log_sum_exp((0..m).map(|j| sim[(i, j)] / tau)) - mf.ln())
        .sum::<f64>()
        / mf;
    let rhs = sim.sum() / (tau * mf * mf);
    Ok(BoundCheck { lhs, rhs, holds: lhs >= rhs - 1e-9 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositiveKind {
    /// Another sample of the same class.
    SameClass,
    /// Two Gaussian jitters of the same sample.
    Jitter { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InfoNceConfig {
    pub tau: f64,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub out_dim: usize,
    pub positives: PositiveKind,
}

impl Default for InfoNceConfig {
    fn default() -> Self {
        Self { tau: 0.5, steps: 600, lr: 0.05, batch: 64, out_dim: 2, positives: PositiveKind::SameClass }
    }
}

#[derive(Debug, Clone)]
pub struct InfoNceEncoder {
    /// `out_dim × in_dim`.
    pub w: Matrix,
    pub tau: f64,
    pub loss_trace: Vec<f64>,
    /// Set when the loss never moved by more than 1e-6 over training.
    pub plateau: bool,
}

impl InfoNceEncoder {
    /// Unit-norm embeddings of the rows of `x`.
    pub fn embed(&self, x: &Matrix) -> Matrix {
        let mut z = x.matmul_t(&self.w);
        for r in 0..z.rows() {
            let row = z.row_mut(r);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
        z
    }

    /// Input direction the map stretches most (top eigenvector of `WᵀW`).
    pub fn direction(&self) -> Vec<f64> {
        let gram = self.w.t_matmul(&self.w);
        eigh_symmetric(&gram).map(|e| e.vectors.column(0)).unwrap_or_else(|_| vec![0.0; self.w.cols()])
    }
}

/// Trains a linear map under a symmetric cross-view InfoNCE objective with
/// in-batch negatives.
pub fn train_infonce_linear(
    data: &Matrix,
    labels: &[usize],
    cfg: &InfoNceConfig,
    seed: u64,
) -> Result<InfoNceEncoder> {
    check_tau(cfg.tau)?;
    let (n, dim) = data.shape();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} samples", labels.len())));
    }
    if cfg.batch < 2 || cfg.out_dim == 0 {
        return Err(Error::InvalidArgument("batch must be >= 2 and out_dim >= 1".into()));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let by_class: Vec<Vec<usize>> = (0..classes).map(|c| (0..n).filter(|&i| labels[i] == c).collect()).collect();
    if matches!(cfg.positives, PositiveKind::SameClass) && by_class.iter().filter(|v| v.len() >= 2).count() < 2 {
        return Err(Error::InvalidArgument("same-class positives need two classes with >= 2 samples".into()));
    }

    let mut rng = Rng::new(seed);
    let mut params = vec![Matrix::from_fn(cfg.out_dim, dim, |_, _| rng.normal() / (dim as f64).sqrt())];
    let mut opt = Adam::new(&params, 0.9, 0.999);
    let mut trace = Vec::with_capacity(cfg.steps);
    let targets: Vec<Option<usize>> = (0..cfg.batch).map(Some).collect();
    for step in 1..=cfg.steps {
        let mut a = Matrix::zeros(cfg.batch, dim);
        let mut b = Matrix::zeros(cfg.batch, dim);
        for r in 0..cfg.batch {
            let i = rng.below(n);
            match cfg.positives {
                PositiveKind::SameClass => {
                    let pool = &by_class[labels[i]];
                    let j = loop {
                        let j = pool[rng.below(pool.len())];
                        if j != i || pool.len() < 2 {
                            break j;
                        }
                    };
                    a.row_mut(r).copy_from_slice(data.row(i));
                    b.row_mut(r).copy_from_slice(data.row(j));
                }
                PositiveKind::Jitter { sigma } => {
                    for c in 0..dim {
                        a[(r, c)] = data[(i, c)] + sigma * rng.normal();
                        b[(r, c)] = data[(i, c)] + sigma * rng.normal();
                    }
                }
            }
        }
        let mut tape = Tape::new();
        let w = tape.leaf(params[0].clone());
        let xa = tape.leaf(a);
        let xb = tape.leaf(b);
        let za = tape.matmul_t(xa, w);
        let za = tape.l2_normalize_rows(za);
        let zb = tape.matmul_t(xb, w);
        let zb = tape.l2_normalize_rows(zb);
        let logits_ab = tape.matmul_t(za, zb);
        let logits_ab = tape.scale(logits_ab, 1.0 / cfg.tau);
        let logits_ba = tape.transpose(logits_ab);
        let l1 = tape.cross_entropy(logits_ab, &targets);
        let l2 = tape.cross_entropy(logits_ba, &targets);
        let sum = tape.add(l1, l2);
        let loss = tape.scale(sum, 0.5);
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Diverged { step, loss: value, hint: format!("reduce lr below {}", cfg.lr) });
        }
        trace.push(value);
        let grads = tape.backward(loss);
        opt.update(&mut params, &[grads.wrt(w)], cfg.lr);
    }
    let lo = trace.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = trace.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let plateau = trace.is_empty() || hi - lo < 1e-6;
    let w = params.pop().expect("one parameter");
    Ok(InfoNceEncoder { w, tau: cfg.tau, loss_trace: trace, plateau })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_closed_forms() {
        let same = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let c = infonce_bound_check(&same, 1.0).unwrap();
        assert!((c.lhs - 1.0).abs() < 1e-12 && (c.rhs - 1.0).abs() < 1e-12 && c.holds);

        let opposite = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let c = infonce_bound_check(&opposite, 1.0).unwrap();
        let expected = (0.5 * (1f64.exp() + (-1f64).exp())).ln();
        assert!((c.lhs - expected).abs() < 1e-12);
        assert!((c.lhs - 0.4338).abs() < 1e-4);
        assert_eq!(c.rhs, 0.0);
    }

    #[test]
    fn bound_rejects_bad_inputs() {
        let e = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(infonce_bound_check(&e, 0.0).is_err());
        assert!(infonce_bound_check(&e, -1.0).is_err());
        assert!(infonce_bound_check(&Matrix::from_rows(&[vec![2.0, 0.0]]).unwrap(), 1.0).is_err());
    }

    #[test]
    fn loss_matches_direct_formula() {
        let e = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let got = infonce_loss(&e, &[(0, 1)], 0.5).unwrap();
        let expected = -0.0 / 0.5 + ((0.0f64 / 0.5).exp() + (-1.0f64 / 0.5).exp()).ln();
        assert!((got - expected).abs() < 1e-12);
        assert!(infonce_loss(&e, &[(0, 0)], 0.5).is_err());
    }

    #[test]
    fn infinite_temperature_plateaus() {
        let mut rng = Rng::new(1);
        let x = Matrix::from_fn(40, 2, |_, _| rng.normal());
        let y: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let cfg = InfoNceConfig { tau: 1e12, steps: 30, ..Default::default() };
        let enc = train_infonce_linear(&x, &y, &cfg, 0).unwrap();
        assert!(enc.plateau);
    }

    #[test]
    fn embeddings_are_unit() {
        let mut rng = Rng::new(2);
        let x = Matrix::from_fn(40, 2, |_, _| rng.normal());
        let y: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let enc = train_infonce_linear(&x, &y, &InfoNceConfig { steps: 20, ..Default::default() }, 0).unwrap();
        let z = enc.embed(&x);
        for r in 0..z.rows() {
            assert!((dot(z.row(r), z.row(r)).sqrt() - 1.0).abs() < 1e-6);
        }
    }
}
