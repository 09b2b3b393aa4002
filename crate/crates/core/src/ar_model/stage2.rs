//! Source-token → target-token model over `[BOS] source [SEP] target`.

use super::config::{ArConfig, VocabLayout};
use super::generate::sample_tokens;
use super::model::ArModel;
use super::sample::SamplerConfig;
use super::train::{train_ar, ArExample};
use crate::error::{Error, Result};
use crate::par;
use crate::tokenizer::TokenGrid;

/// Target tokens are generable; source tokens sit in the auxiliary range.
pub fn stage2_vocab(source_k: usize, target_k: usize) -> VocabLayout {
    VocabLayout { tokens: target_k, aux: source_k, classes: 0 }
}

fn source_prefix(source: &TokenGrid, vocab: &VocabLayout) -> Result<Vec<u32>> {
    let mut ids = Vec::with_capacity(source.len() + 2);
    ids.push(vocab.bos());
    for &t in source.tokens() {
        ids.push(vocab.aux_id(t as usize)?);
    }
    ids.push(vocab.sep());
    Ok(ids)
}

/// Training example whose loss covers only the target positions.
pub fn stage2_example(source: &TokenGrid, target: &TokenGrid, vocab: &VocabLayout) -> Result<ArExample> {
    let mut ids = source_prefix(source, vocab)?;
    let loss_start = ids.len();
    for &t in target.tokens() {
        if t as usize >= vocab.tokens {
            return Err(Error::InvalidArgument(format!("target token {t} outside {} target ids", vocab.tokens)));
        }
        ids.push(t);
    }
    Ok(ArExample { ids, loss_start })
}

pub fn stage2_examples(pairs: &[(TokenGrid, TokenGrid)], vocab: &VocabLayout) -> Result<Vec<ArExample>> {
    pairs.iter().map(|(s, t)| stage2_example(s, t, vocab)).collect()
}

/// Trains one causal model on paired grids; `cfg.vocab` must come from [`stage2_vocab`].
pub fn train_stage2(pairs: &[(TokenGrid, TokenGrid)], cfg: &ArConfig, seed: u64) -> Result<ArModel> {
    let (s, t) = pairs.first().ok_or_else(|| Error::InvalidArgument("no stage-2 pairs".into()))?;
    let needed = s.len() + t.len() + 2;
    if needed > cfg.max_len {
        return Err(Error::InvalidArgument(format!("stage-2 sequence length {needed} exceeds max_len {}", cfg.max_len)));
    }
    train_ar(&stage2_examples(pairs, &cfg.vocab)?, cfg, seed)
}

/// Samples a target grid of shape `h × w` given a source grid.
pub fn translate(model: &ArModel, source: &TokenGrid, h: usize, w: usize, sampler: &SamplerConfig) -> Result<TokenGrid> {
    let prefix = source_prefix(source, &model.cfg.vocab)?;
    TokenGrid::new(h, w, sample_tokens(model, &prefix, h * w, sampler)?)
}

/// Fraction of target positions whose teacher-forced argmax equals the target.
pub fn teacher_forced_accuracy(model: &ArModel, examples: &[ArExample]) -> Result<f64> {
    let k = model.cfg.vocab.tokens;
    let parts = par::map(examples, |e| -> Result<(usize, usize)> {
        let logits = model.forward_logits(&e.ids)?;
        let mut hit = 0;
        let mut n = 0;
        for t in e.loss_start.max(1)..e.ids.len() {
            let row = &logits.row(t - 1)[..k];
            let pred = row.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0;
            hit += usize::from(pred as u32 == e.ids[t]);
            n += 1;
        }
        Ok((hit, n))
    });
    let (mut hit, mut n) = (0, 0);
    for p in parts {
        let (h, c) = p?;
        hit += h;
        n += c;
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no target positions".into()));
    }
    Ok(hit as f64 / n as f64)
}
