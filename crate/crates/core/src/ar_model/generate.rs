use super::model::ArModel;
use super::sample::{sample_next, SamplerConfig};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::tokenizer::TokenGrid;

/// Samples `n` image tokens after `prefix`; ids outside the image-token range are never drawn.
pub fn sample_tokens(model: &ArModel, prefix: &[u32], n: usize, sampler: &SamplerConfig) -> Result<Vec<u32>> {
    sampler.validate()?;
    if prefix.is_empty() {
        return Err(Error::InvalidArgument("prefix must contain at least the leading token".into()));
    }
    if prefix.len() + n > model.cfg.max_len + 1 {
        return Err(Error::InvalidArgument(format!(
            "prefix {} plus {n} new tokens exceeds max_len {}",
            prefix.len(),
            model.cfg.max_len
        )));
    }
    model.check_ids(prefix)?;
    let k = model.cfg.vocab.tokens;
    let mut rng = Rng::new(sampler.seed);
    let mut cache = model.new_cache();
    let mut scores = Vec::new();
    for &t in prefix {
        scores = model.step(&mut cache, t)?;
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        scores[k..].iter_mut().for_each(|s| *s = f64::NEG_INFINITY);
        let next = sample_next(&scores, sampler, &mut rng)? as u32;
        out.push(next);
        if i + 1 < n {
            scores = model.step(&mut cache, next)?;
        }
    }
    Ok(out)
}

/// Leading id for an optional class condition.
pub fn leading_token(model: &ArModel, condition: Option<usize>) -> Result<u32> {
    match condition {
        Some(c) => model.cfg.vocab.class_id(c),
        None => Ok(model.cfg.vocab.bos()),
    }
}

/// Samples an `h × w` grid in raster order after the condition (or BOS) token.
pub fn generate_grid(
    model: &ArModel,
    condition: Option<usize>,
    sampler: &SamplerConfig,
    h: usize,
    w: usize,
) -> Result<TokenGrid> {
    let lead = leading_token(model, condition)?;
    TokenGrid::new(h, w, sample_tokens(model, &[lead], h * w, sampler)?)
}

/// Keeps the first `rows` token rows of `grid` and samples the rest.
pub fn complete_grid(
    model: &ArModel,
    condition: Option<usize>,
    grid: &TokenGrid,
    rows: usize,
    sampler: &SamplerConfig,
) -> Result<TokenGrid> {
    if rows > grid.h() {
        return Err(Error::InvalidArgument(format!("{rows} prefix rows for a grid of height {}", grid.h())));
    }
    let given = rows * grid.w();
    let mut prefix = vec![leading_token(model, condition)?];
    prefix.extend_from_slice(&grid.tokens()[..given]);
    let mut tokens = grid.tokens()[..given].to_vec();
    tokens.extend(sample_tokens(model, &prefix, grid.len() - given, sampler)?);
    TokenGrid::new(grid.h(), grid.w(), tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ar_model::{ArConfig, VocabLayout};

    fn model() -> ArModel {
        let cfg = ArConfig {
            layers: 1,
            model_dim: 8,
            heads: 2,
            ffn_dim: 16,
            vocab: VocabLayout::new(5, 3),
            max_len: 10,
            ..Default::default()
        };
        ArModel::new(&cfg, 4).unwrap()
    }

    #[test]
    fn grids_use_image_ids_only_and_repeat_under_seed() {
        let m = model();
        let s = SamplerConfig::pure(11);
        let a = generate_grid(&m, Some(2), &s, 3, 3).unwrap();
        assert!(a.tokens().iter().all(|&t| t < 5));
        assert_eq!(a, generate_grid(&m, Some(2), &s, 3, 3).unwrap());
        assert!(generate_grid(&m, Some(3), &s, 3, 3).is_err());
        assert!(generate_grid(&m, None, &s, 4, 3).is_err());
    }

    #[test]
    fn completion_keeps_the_given_rows() {
        let m = model();
        let g = TokenGrid::new(3, 3, vec![4, 3, 2, 1, 0, 1, 2, 3, 4]).unwrap();
        let c = complete_grid(&m, None, &g, 2, &SamplerConfig::pure(1)).unwrap();
        assert_eq!(&c.tokens()[..6], &g.tokens()[..6]);
        assert_eq!(complete_grid(&m, None, &g, 3, &SamplerConfig::pure(1)).unwrap(), g);
    }
}
