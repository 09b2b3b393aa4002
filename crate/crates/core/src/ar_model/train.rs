use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ArConfig, VocabLayout};
use super::model::ArModel;
use crate::error::{Error, Result};
use crate::numerics::{Adam, Matrix, Rng, Tape};
use crate::par;
use crate::tokenizer::TokenSequence;

const MICRO_BATCH: usize = 8;

/// One training sequence; positions `>= loss_start` are prediction targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArExample {
    pub ids: Vec<u32>,
    pub loss_start: usize,
}

impl ArExample {
    /// Targets every id after the leading one.
    pub fn full(ids: Vec<u32>) -> Self {
        Self { ids, loss_start: 1 }
    }

    fn targets(&self) -> Vec<Option<usize>> {
        let n = self.ids.len();
        (0..n)
            .map(|t| if t + 1 < n && t + 1 >= self.loss_start { Some(self.ids[t + 1] as usize) } else { None })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Training examples from raster sequences; unconditioned ones gain a leading BOS.
pub fn sequence_examples(seqs: &[TokenSequence], vocab: &VocabLayout) -> Vec<ArExample> {
    seqs.iter()
        .map(|s| {
            let mut ids = Vec::with_capacity(s.len() + 1);
            if !s.has_condition {
                ids.push(vocab.bos());
            }
            ids.extend_from_slice(&s.ids);
            ArExample::full(ids)
        })
        .collect()
}

fn check_examples(model: &ArModel, examples: &[ArExample]) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no training sequences".into()));
    }
    for (i, e) in examples.iter().enumerate() {
        model.check_ids(&e.ids).map_err(|err| Error::InvalidArgument(format!("sequence {i}: {err}")))?;
        if e.loss_start == 0 || e.loss_start >= e.ids.len() {
            return Err(Error::InvalidArgument(format!(
                "sequence {i}: loss_start {} leaves no targets in length {}",
                e.loss_start,
                e.ids.len()
            )));
        }
    }
    Ok(())
}

/// Summed cross-entropy gradients of one padded micro-batch, plus loss sum and target count.
fn micro_batch_grads(model: &ArModel, batch: &[&ArExample], dropout: Option<Rng>) -> (Vec<Matrix>, f64, usize) {
    let seq_len = batch.iter().map(|e| e.ids.len()).max().unwrap_or(0);
    let mut ids = Vec::with_capacity(batch.len() * seq_len);
    let mut targets = Vec::with_capacity(batch.len() * seq_len);
    for e in batch {
        ids.extend(e.ids.iter().map(|&t| t as usize));
        ids.extend(std::iter::repeat_n(0, seq_len - e.ids.len()));
        targets.extend(e.targets());
        targets.extend(std::iter::repeat_n(None, seq_len - e.ids.len()));
    }
    let count = targets.iter().filter(|t| t.is_some()).count();
    let mut tape = Tape::new();
    let vars = model.leaves(&mut tape);
    let mut drop_rng = dropout;
    let out = model.tape_forward(&mut tape, &vars, &ids, seq_len, drop_rng.as_mut());
    let loss = tape.cross_entropy(out.logits, &targets);
    let mean = tape.scalar(loss);
    let mut grads = tape.backward(loss);
    let scale = count as f64;
    let g = vars.iter().map(|&v| grads.take(v).scale(scale)).collect();
    (g, mean * scale, count)
}

fn clip(grads: &mut [Matrix], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads.iter().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= s));
    }
}

/// Next-token training with masked cross-entropy, Adam and an inverse-sqrt schedule.
pub fn train_ar(examples: &[ArExample], cfg: &ArConfig, seed: u64) -> Result<ArModel> {
    let root = Rng::new(seed);
    let mut model = ArModel::new(cfg, root.split(0).seed())?;
    check_examples(&model, examples)?;
    let schedule = cfg.optimizer.schedule();
    let mut opt = Adam::new(&model.params, cfg.optimizer.beta1, cfg.optimizer.beta2);
    let mut batch_rng = root.split(1);
    let drop_root = root.split(2);
    for step in 0..cfg.steps {
        let picks: Vec<&ArExample> = (0..cfg.batch).map(|_| &examples[batch_rng.below(examples.len())]).collect();
        let chunks: Vec<&[&ArExample]> = picks.chunks(MICRO_BATCH).collect();
        let parts = par::map_range(chunks.len(), |i| {
            let rng = (cfg.dropout > 0.0).then(|| drop_root.split(((step as u64) << 16) | i as u64));
            micro_batch_grads(&model, chunks[i], rng)
        });
        let mut total = 0usize;
        let mut loss_sum = 0.0;
        let mut grads: Vec<Matrix> = model.params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        for (g, l, c) in parts {
            for (acc, gi) in grads.iter_mut().zip(&g) {
                acc.add_assign(gi);
            }
            loss_sum += l;
            total += c;
        }
        let loss = loss_sum / total.max(1) as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss, hint: "lower optimizer.peak_lr or raise warmup".into() });
        }
        let inv = 1.0 / total.max(1) as f64;
        grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= inv));
        clip(&mut grads, cfg.optimizer.grad_clip);
        let lr = schedule.lr(step + 1);
        opt.update(&mut model.params, &grads, lr);
        model.log.push(TrainLogRow { step: step + 1, lr, loss });
    }
    model.round_to_f32();
    Ok(model)
}

/// Mean masked cross-entropy over `examples` and its gradient for every parameter, without dropout.
pub fn loss_gradients(model: &ArModel, examples: &[ArExample]) -> Result<(f64, Vec<Matrix>)> {
    check_examples(model, examples)?;
    let batch: Vec<&ArExample> = examples.iter().collect();
    let (mut grads, loss_sum, count) = micro_batch_grads(model, &batch, None);
    let inv = 1.0 / count.max(1) as f64;
    grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= inv));
    Ok((loss_sum * inv, grads))
}

/// Mean negative log-likelihood in nats per target token.
pub fn evaluate_nll(model: &ArModel, examples: &[ArExample]) -> Result<f64> {
    check_examples(model, examples)?;
    let parts = par::map(examples, |e| {
        let logits = model.forward_logits(&e.ids).expect("checked ids");
        let mut sum = 0.0;
        let mut count = 0usize;
        for (t, target) in e.targets().into_iter().enumerate() {
            if let Some(y) = target {
                let row = logits.row(t);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                sum += lse - row[y];
                count += 1;
            }
        }
        (sum, count)
    });
    let (sum, count) = parts.into_iter().fold((0.0, 0), |(s, c), (a, b)| (s + a, c + b));
    Ok(sum / count.max(1) as f64)
}

pub fn write_train_log(path: &Path, log: &[TrainLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in log {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Malformed(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(vocab: VocabLayout) -> ArConfig {
        ArConfig {
            layers: 2,
            model_dim: 32,
            heads: 2,
            ffn_dim: 64,
            vocab,
            max_len: 16,
            steps: 200,
            batch: 8,
            ..Default::default()
        }
    }

    #[test]
    fn memorizes_a_repeated_sequence() {
        let vocab = VocabLayout::new(6, 0);
        let ex = ArExample::full(vec![vocab.bos(), 3, 1, 4, 1, 5, 2, 0, 5]);
        let cfg = ArConfig { optimizer: super::super::ArOptimizer { peak_lr: 3e-3, warmup: 20, ..Default::default() }, ..tiny(vocab) };
        let model = train_ar(std::slice::from_ref(&ex), &cfg, 1).unwrap();
        assert!(evaluate_nll(&model, &[ex]).unwrap() < 0.05);
    }

    #[test]
    fn rejects_overflowing_ids() {
        let vocab = VocabLayout::new(4, 0);
        let ex = ArExample::full(vec![vocab.bos(), 9]);
        assert!(train_ar(&[ex], &tiny(vocab), 0).is_err());
    }

    #[test]
    fn masked_prefix_is_not_a_target() {
        let e = ArExample { ids: vec![7, 1, 2, 3], loss_start: 2 };
        assert_eq!(e.targets(), vec![None, Some(2), Some(3), None]);
    }
}
