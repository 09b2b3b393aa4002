use serde::{Deserialize, Serialize};

use super::model::ArModel;
use crate::error::{Error, Result};
use crate::numerics::{Adam, Matrix, Rng};
use crate::par;

/// Multinomial logistic regression on standardized features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub steps: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { steps: 300, lr: 0.05, l2: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbePooling {
    /// One classifier per layer on that layer's position-averaged states.
    PerLayer,
    /// A single classifier on the average over every block's position-averaged states.
    CrossLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub train_fraction: f64,
    pub classifier: ClassifierConfig,
    pub pooling: ProbePooling,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { train_fraction: 0.7, classifier: ClassifierConfig::default(), pooling: ProbePooling::PerLayer, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub model_tag: String,
    pub codebook_size: usize,
    /// Held-out accuracy per layer; index 0 is the embedding output.
    pub layer_accuracy: Vec<f64>,
}

impl ProbeReport {
    pub fn best(&self) -> (usize, f64) {
        self.layer_accuracy
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, a)| if a > b.1 { (i, a) } else { b })
    }
}

fn standardize(train: &Matrix, test: &Matrix) -> (Matrix, Matrix) {
    let mean = train.column_means();
    let n = train.rows().max(1) as f64;
    let std: Vec<f64> = (0..train.cols())
        .map(|c| {
            let var = (0..train.rows()).map(|r| (train[(r, c)] - mean[c]).powi(2)).sum::<f64>() / n;
            var.sqrt().max(1e-8)
        })
        .collect();
    let f = |m: &Matrix| Matrix::from_fn(m.rows(), m.cols(), |r, c| (m[(r, c)] - mean[c]) / std[c]);
    (f(train), f(test))
}

fn softmax_rows(m: &mut Matrix) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        row.iter_mut().for_each(|v| {
            *v = (*v - max).exp();
            s += *v;
        });
        row.iter_mut().for_each(|v| *v /= s);
    }
}

/// Trains on `(train_x, train_y)` and returns accuracy on `(test_x, test_y)`.
pub fn softmax_classifier_accuracy(
    train_x: &Matrix,
    train_y: &[usize],
    test_x: &Matrix,
    test_y: &[usize],
    classes: usize,
    cfg: &ClassifierConfig,
) -> Result<f64> {
    if train_x.rows() != train_y.len() || test_x.rows() != test_y.len() || train_x.cols() != test_x.cols() {
        return Err(Error::Shape("probe features and labels disagree".into()));
    }
    if test_y.is_empty() {
        return Err(Error::InvalidArgument("empty held-out split".into()));
    }
    if let Some(&bad) = train_y.iter().chain(test_y).find(|&&y| y >= classes) {
        return Err(Error::InvalidArgument(format!("label {bad} outside {classes} classes")));
    }
    let mut seen = vec![false; classes];
    train_y.iter().for_each(|&y| seen[y] = true);
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::InvalidArgument("probe needs at least two classes in the training split".into()));
    }
    let (xtr, xte) = standardize(train_x, test_x);
    let n = xtr.rows() as f64;
    let mut params = vec![Matrix::zeros(xtr.cols(), classes), Matrix::zeros(1, classes)];
    let mut opt = Adam::new(&params, 0.9, 0.999);
    for _ in 0..cfg.steps {
        let mut p = xtr.matmul(&params[0]);
        for r in 0..p.rows() {
            p.row_mut(r).iter_mut().zip(params[1].data()).for_each(|(v, b)| *v += b);
        }
        softmax_rows(&mut p);
        for (r, &y) in train_y.iter().enumerate() {
            p[(r, y)] -= 1.0;
        }
        let mut gw = xtr.t_matmul(&p).scale(1.0 / n);
        gw.scaled_add_assign(cfg.l2, &params[0]);
        let gb = Matrix::from_vec(1, classes, p.column_means())?;
        opt.update(&mut params, &[gw, gb], cfg.lr);
    }
    let scores = xte.matmul(&params[0]);
    let correct = test_y
        .iter()
        .enumerate()
        .filter(|&(r, &y)| {
            let row = scores.row(r);
            let pred = (0..classes)
                .map(|c| row[c] + params[1].data()[c])
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, v)| if v > b.1 { (i, v) } else { b })
                .0;
            pred == y
        })
        .count();
    Ok(correct as f64 / test_y.len() as f64)
}

/// Position-averaged residual states: one `n × d` matrix per layer (embedding first).
pub fn layer_features(model: &ArModel, sequences: &[Vec<u32>]) -> Result<Vec<Matrix>> {
    if sequences.is_empty() {
        return Err(Error::InvalidArgument("no sequences to probe".into()));
    }
    let pooled = par::map(sequences, |ids| -> Result<Vec<Vec<f64>>> {
        Ok(model.hidden_states(ids)?.iter().map(|h| h.column_means()).collect())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let layers = model.cfg.layers + 1;
    (0..layers)
        .map(|l| Matrix::from_rows(&pooled.iter().map(|p| p[l].clone()).collect::<Vec<_>>()))
        .collect()
}

/// Deterministic train/held-out split of `0..n`.
pub fn probe_split(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("train_fraction {train_fraction} outside (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut idx);
    let cut = ((n as f64 * train_fraction).round() as usize).clamp(1, n.saturating_sub(1));
    let test = idx.split_off(cut);
    Ok((idx, test))
}

/// Accuracy of a linear classifier on features `x` under the configured split.
pub fn probe_features(x: &Matrix, labels: &[usize], classes: usize, cfg: &ProbeConfig) -> Result<f64> {
    if x.rows() != labels.len() {
        return Err(Error::Shape(format!("{} feature rows for {} labels", x.rows(), labels.len())));
    }
    let (tr, te) = probe_split(labels.len(), cfg.train_fraction, cfg.seed)?;
    let pick = |idx: &[usize]| (x.select_rows(idx), idx.iter().map(|&i| labels[i]).collect::<Vec<_>>());
    let (xtr, ytr) = pick(&tr);
    let (xte, yte) = pick(&te);
    softmax_classifier_accuracy(&xtr, &ytr, &xte, &yte, classes, &cfg.classifier)
}

/// Frozen-feature linear probe at every layer of `model`.
pub fn linear_probe(
    model: &ArModel,
    sequences: &[Vec<u32>],
    labels: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
    model_tag: &str,
) -> Result<ProbeReport> {
    let feats = layer_features(model, sequences)?;
    let layer_accuracy = match cfg.pooling {
        ProbePooling::PerLayer => feats.iter().map(|f| probe_features(f, labels, classes, cfg)).collect::<Result<_>>()?,
        ProbePooling::CrossLayer => {
            let mut avg = feats[1].clone();
            for f in &feats[2..] {
                avg.add_assign(f);
            }
            vec![probe_features(&avg.scale(1.0 / (feats.len() - 1) as f64), labels, classes, cfg)?]
        }
    };
    Ok(ProbeReport { model_tag: model_tag.into(), codebook_size: model.cfg.vocab.tokens, layer_accuracy })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_features_are_separable() {
        let labels: Vec<usize> = (0..90).map(|i| i % 3).collect();
        let x = Matrix::from_fn(90, 3, |r, c| if labels[r] == c { 1.0 } else { 0.0 });
        assert_eq!(probe_features(&x, &labels, 3, &ProbeConfig::default()).unwrap(), 1.0);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = Matrix::zeros(10, 2);
        assert!(probe_features(&x, &[0; 10], 2, &ProbeConfig::default()).is_err());
    }
}
