use serde::{Deserialize, Serialize};

use super::generate::complete_grid;
use super::model::ArModel;
use super::sample::SamplerConfig;
use super::train::{evaluate_nll, sequence_examples};
use crate::data::ImageGrid;
use crate::encoders::{pixel_mse, PatchEncoder, PixelDecoder};
use crate::error::{Error, Result};
use crate::metrics::toy_fid;
use crate::numerics::Rng;
use crate::par;
use crate::tokenizer::{flatten_raster, quantize, Codebook, TokenGrid};

pub const DEFAULT_PREFIX_FRACS: [f64; 4] = [0.125, 0.25, 0.5, 0.75];

/// Token model plus the renderer that turns its grids into pixels.
pub struct Pipeline<'a> {
    pub tag: String,
    pub model: &'a ArModel,
    pub codebook: &'a Codebook,
    pub decoder: &'a PixelDecoder,
    /// Held-out images tokenized by this pipeline, aligned with the real images.
    pub heldout: Vec<TokenGrid>,
}

impl Pipeline<'_> {
    pub fn render(&self, grid: &TokenGrid) -> Result<ImageGrid> {
        self.decoder.decode_tokens(grid, self.codebook)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrefixConfig {
    pub fracs: Vec<f64>,
    pub sampler: SamplerConfig,
    pub seeds: Vec<u64>,
}

impl Default for PrefixConfig {
    fn default() -> Self {
        Self { fracs: DEFAULT_PREFIX_FRACS.to_vec(), sampler: SamplerConfig::default(), seeds: vec![0, 1, 2] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixRow {
    pub pipeline: String,
    pub frac: f64,
    pub prefix_rows: usize,
    pub seed: u64,
    pub toy_fid: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixMean {
    pub pipeline: String,
    pub frac: f64,
    pub toy_fid: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrefixReport {
    pub rows: Vec<PrefixRow>,
    pub means: Vec<PrefixMean>,
    /// Toy-FID of each pipeline's rendered held-out tokens (no sampling).
    pub teacher_forced: Vec<(String, f64)>,
}

impl PrefixReport {
    pub fn mean(&self, pipeline: &str, frac: f64) -> Option<f64> {
        self.means.iter().find(|m| m.pipeline == pipeline && m.frac == frac).map(|m| m.toy_fid)
    }
}

/// Conditions on the first `⌊frac·h⌋` token rows of each held-out grid, samples
/// the rest, renders, and scores toy-FID against the real held-out images.
///
/// Sampling streams depend only on `(seed, frac index, image index)`, so every
/// pipeline sees the same randomness.
pub fn prefix_completion_eval(
    pipelines: &[Pipeline],
    real: &[ImageGrid],
    fid_encoder: &PatchEncoder,
    cfg: &PrefixConfig,
) -> Result<PrefixReport> {
    cfg.sampler.validate()?;
    if let Some(&f) = cfg.fracs.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
        return Err(Error::InvalidArgument(format!("prefix fraction {f} outside (0, 1)")));
    }
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidArgument("no seeds".into()));
    }
    for p in pipelines {
        if p.heldout.len() != real.len() {
            return Err(Error::Shape(format!("pipeline {}: {} token grids for {} images", p.tag, p.heldout.len(), real.len())));
        }
    }
    let mut report = PrefixReport::default();
    for p in pipelines {
        let rendered = par::map(&p.heldout, |g| p.render(g)).into_iter().collect::<Result<Vec<_>>>()?;
        report.teacher_forced.push((p.tag.clone(), toy_fid(real, &rendered, fid_encoder)?));
    }
    for (fi, &frac) in cfg.fracs.iter().enumerate() {
        for p in pipelines {
            let mut sum = 0.0;
            for &seed in &cfg.seeds {
                let root = Rng::new(seed);
                let images = par::map_range(real.len(), |i| -> Result<ImageGrid> {
                    let grid = &p.heldout[i];
                    let rows = (frac * grid.h() as f64).floor() as usize;
                    let sampler = SamplerConfig { seed: root.split(((fi as u64) << 32) | i as u64).seed(), ..cfg.sampler };
                    p.render(&complete_grid(p.model, None, grid, rows, &sampler)?)
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
                let fid = toy_fid(real, &images, fid_encoder)?;
                sum += fid;
                let prefix_rows = (frac * p.heldout[0].h() as f64).floor() as usize;
                report.rows.push(PrefixRow { pipeline: p.tag.clone(), frac, prefix_rows, seed, toy_fid: fid });
            }
            report.means.push(PrefixMean { pipeline: p.tag.clone(), frac, toy_fid: sum / cfg.seeds.len() as f64 });
        }
    }
    Ok(report)
}

/// Held-out reconstruction and generation proxies of one tokenizer pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentObjectiveReport {
    /// Mean squared pixel error of encode → quantize → decode.
    pub recon_term: f64,
    /// AR negative log-likelihood in nats per token of the quantized latents.
    pub gen_term: f64,
}

pub fn latent_objective_report(
    encoder: &PatchEncoder,
    codebook: &Codebook,
    decoder: &PixelDecoder,
    model: &ArModel,
    heldout: &[ImageGrid],
) -> Result<LatentObjectiveReport> {
    if heldout.is_empty() {
        return Err(Error::InvalidArgument("empty held-out set".into()));
    }
    if decoder.in_dim() != codebook.dim() {
        return Err(Error::Shape(format!("decoder input {} vs codebook dim {}", decoder.in_dim(), codebook.dim())));
    }
    if model.cfg.vocab.tokens != codebook.k() {
        return Err(Error::Shape(format!("model has {} image tokens, codebook {}", model.cfg.vocab.tokens, codebook.k())));
    }
    let parts = par::map(heldout, |img| -> Result<(TokenGrid, f64)> {
        let tokens = quantize(&encoder.encode(img, None)?, codebook)?;
        let out = decoder.decode_tokens(&tokens, codebook)?;
        Ok((tokens, pixel_mse(&out, img)))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let recon_term = parts.iter().map(|p| p.1).sum::<f64>() / heldout.len() as f64;
    let seqs: Vec<_> = parts.iter().map(|(t, _)| flatten_raster(t, None, 0)).collect();
    let gen_term = evaluate_nll(model, &sequence_examples(&seqs, &model.cfg.vocab))?;
    Ok(LatentObjectiveReport { recon_term, gen_term })
}
