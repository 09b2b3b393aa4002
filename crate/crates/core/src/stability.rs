//! Latent stability under pixel noise at controlled signal-to-noise ratios.

use serde::{Deserialize, Serialize};

use crate::data::{FeatureGrid, ImageGrid};
use crate::encoders::PatchEncoder;
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::par;
use crate::tokenizer::{quantize, Codebook, TokenGrid};

/// Default SNR grid (linear power ratios).
pub const DEFAULT_SNR_LEVELS: [f64; 8] = [30.0, 25.0, 20.0, 15.0, 10.0, 5.0, 1.0, 0.01];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    pub snr_levels: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self { snr_levels: DEFAULT_SNR_LEVELS.to_vec(), seeds: (0..5).collect() }
    }
}

impl StabilityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.snr_levels.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidArgument("stability sweep needs at least one snr and one seed".into()));
        }
        for &s in &self.snr_levels {
            check_snr(s)?;
        }
        Ok(())
    }
}

fn check_snr(snr: f64) -> Result<()> {
    if !(snr > 0.0) {
        return Err(Error::InvalidArgument(format!("snr must be > 0, got {snr}")));
    }
    Ok(())
}

/// Pre-clamp Gaussian noise with variance `signal_power / snr`; all zeros for
/// an infinite snr or a constant image.
pub fn noise_field(image: &ImageGrid, snr: f64, seed: u64) -> Result<Vec<f64>> {
    check_snr(snr)?;
    let n = image.values().len();
    if snr.is_infinite() {
        return Ok(vec![0.0; n]);
    }
    let sigma = (image.signal_power() / snr).sqrt();
    let mut rng = Rng::new(seed);
    Ok((0..n).map(|_| sigma * rng.normal()).collect())
}

/// Adds SNR-calibrated Gaussian noise and clamps to `[0, 1]`.
pub fn add_noise_snr(image: &ImageGrid, snr: f64, seed: u64) -> Result<ImageGrid> {
    let noise = noise_field(image, snr, seed)?;
    let values = image.values().iter().zip(&noise).map(|(&v, e)| (v as f64 + e) as f32).collect();
    ImageGrid::from_clamped(image.height(), image.width(), image.channels(), values)
}

/// Signal power over the power of the (post-clamp) perturbation actually applied.
pub fn realized_snr(clean: &ImageGrid, noisy: &ImageGrid) -> f64 {
    let n = clean.values().len().max(1) as f64;
    let noise = clean.values().iter().zip(noisy.values()).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum::<f64>() / n;
    clean.signal_power() / noise
}

pub fn token_change_rate(clean: &TokenGrid, noisy: &TokenGrid) -> Result<f64> {
    if (clean.h(), clean.w()) != (noisy.h(), noisy.w()) {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{} token grids",
            clean.h(),
            clean.w(),
            noisy.h(),
            noisy.w()
        )));
    }
    let changed = clean.tokens().iter().zip(noisy.tokens()).filter(|(a, b)| a != b).count();
    Ok(changed as f64 / clean.len().max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSummary {
    pub mean: f64,
    /// Cells skipped because one side had zero norm.
    pub excluded: usize,
}

pub fn feature_cosine(clean: &FeatureGrid, noisy: &FeatureGrid) -> Result<CosineSummary> {
    if (clean.h(), clean.w(), clean.d()) != (noisy.h(), noisy.w(), noisy.d()) {
        return Err(Error::Shape("feature grids differ in shape".into()));
    }
    let (mut total, mut used, mut excluded) = (0.0, 0usize, 0usize);
    for (a, b) in clean.iter_cells().zip(noisy.iter_cells()) {
        let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
        for (&x, &y) in a.iter().zip(b) {
            let (x, y) = (x as f64, y as f64);
            ab += x * y;
            aa += x * x;
            bb += y * y;
        }
        if aa == 0.0 || bb == 0.0 {
            excluded += 1;
            continue;
        }
        total += ab / (aa.sqrt() * bb.sqrt());
        used += 1;
    }
    if used == 0 {
        return Err(Error::InvalidArgument("cosine undefined: every cell has zero norm".into()));
    }
    Ok(CosineSummary { mean: total / used as f64, excluded })
}

/// One encoder under test with the codebook fit on its own clean features.
pub struct SweepEntry<'a> {
    pub tag: String,
    pub encoder: &'a PatchEncoder,
    pub codebook: Option<&'a Codebook>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub encoder: String,
    pub snr: f64,
    /// `None` on the per-(encoder, snr) mean rows.
    pub seed: Option<u64>,
    pub change_rate: f64,
    pub mean_cosine: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
    pub means: Vec<StabilityRow>,
    /// Mean realized (post-clamp) SNR per requested level.
    pub realized_snr: Vec<(f64, f64)>,
    pub notes: Vec<String>,
}

impl StabilityReport {
    pub fn mean(&self, encoder: &str, snr: f64) -> Option<&StabilityRow> {
        self.means.iter().find(|r| r.encoder == encoder && r.snr == snr)
    }
}

/// Noise stream for image `i` at snr index `s` under `seed`; shared by all encoders.
fn noise_seed(seed: u64, s: usize, i: usize) -> u64 {
    Rng::new(seed).split(((s as u64) << 32) | i as u64).seed()
}

struct Cell {
    change: Vec<f64>,
    cosine: Vec<f64>,
    realized: f64,
}

/// Encodes clean and noisy images, quantizes both and records change rates and
/// pre-quantization cosine for every (encoder, snr, seed).
pub fn stability_sweep(entries: &[SweepEntry<'_>], images: &[ImageGrid], cfg: &StabilityConfig) -> Result<StabilityReport> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::InvalidArgument("no images".into()));
    }
    let mut notes = Vec::new();
    let mut codebooks = Vec::with_capacity(entries.len());
    for e in entries {
        let cb = e.codebook.ok_or_else(|| Error::InvalidArgument(format!("missing codebook for encoder {}", e.tag)))?;
        if cb.k() == 1 {
            notes.push(format!("{}: K = 1, every cell maps to the single token (degenerate)", e.tag));
        }
        codebooks.push(cb);
    }
    let clean: Vec<Vec<(FeatureGrid, TokenGrid)>> = entries
        .iter()
        .zip(&codebooks)
        .map(|(e, cb)| {
            par::map(images, |img| {
                let f = e.encoder.encode(img, None)?;
                let t = quantize(&f, cb)?;
                Ok((f, t))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let (ns, nd, ni) = (cfg.snr_levels.len(), cfg.seeds.len(), images.len());
    let cells: Vec<Result<Cell>> = par::map_range(ns * nd * ni, |idx| {
        let (s, rest) = (idx / (nd * ni), idx % (nd * ni));
        let (d, i) = (rest / ni, rest % ni);
        let noisy = add_noise_snr(&images[i], cfg.snr_levels[s], noise_seed(cfg.seeds[d], s, i))?;
        let mut change = Vec::with_capacity(entries.len());
        let mut cosine = Vec::with_capacity(entries.len());
        for (e, (cb, base)) in entries.iter().zip(codebooks.iter().zip(&clean)) {
            let f = e.encoder.encode(&noisy, None)?;
            let t = quantize(&f, cb)?;
            change.push(token_change_rate(&base[i].1, &t)?);
            cosine.push(feature_cosine(&base[i].0, &f)?.mean);
        }
        Ok(Cell { change, cosine, realized: realized_snr(&images[i], &noisy) })
    });
    let cells: Vec<Cell> = cells.into_iter().collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut means = Vec::new();
    let mut realized = Vec::new();
    for (ei, e) in entries.iter().enumerate() {
        for (s, &snr) in cfg.snr_levels.iter().enumerate() {
            let (mut cr_sum, mut cos_sum) = (0.0, 0.0);
            for (d, &seed) in cfg.seeds.iter().enumerate() {
                let block = &cells[(s * nd + d) * ni..(s * nd + d + 1) * ni];
                let cr = block.iter().map(|c| c.change[ei]).sum::<f64>() / ni as f64;
                let cos = block.iter().map(|c| c.cosine[ei]).sum::<f64>() / ni as f64;
                cr_sum += cr;
                cos_sum += cos;
                rows.push(StabilityRow { encoder: e.tag.clone(), snr, seed: Some(seed), change_rate: cr, mean_cosine: cos });
            }
            means.push(StabilityRow {
                encoder: e.tag.clone(),
                snr,
                seed: None,
                change_rate: cr_sum / nd as f64,
                mean_cosine: cos_sum / nd as f64,
            });
        }
    }
    for (s, &snr) in cfg.snr_levels.iter().enumerate() {
        let block = &cells[s * nd * ni..(s + 1) * nd * ni];
        let finite: Vec<f64> = block.iter().map(|c| c.realized).filter(|v| v.is_finite()).collect();
        let mean = if finite.is_empty() { f64::INFINITY } else { finite.iter().sum::<f64>() / finite.len() as f64 };
        realized.push((snr, mean));
    }
    Ok(StabilityReport { rows, means, realized_snr: realized, notes })
}

/// Levels where `better` fails to beat `worse` on change rate or cosine.
pub fn ordering_violations(report: &StabilityReport, better: &str, worse: &str) -> Vec<String> {
    let mut out = Vec::new();
    for b in report.means.iter().filter(|r| r.encoder == better) {
        let Some(w) = report.mean(worse, b.snr) else {
            out.push(format!("snr {}: no {worse} row", b.snr));
            continue;
        };
        if !(b.change_rate < w.change_rate) {
            out.push(format!("snr {}: change rate {better} {:.4} >= {worse} {:.4}", b.snr, b.change_rate, w.change_rate));
        }
        if !(b.mean_cosine > w.mean_cosine) {
            out.push(format!("snr {}: cosine {better} {:.4} <= {worse} {:.4}", b.snr, b.mean_cosine, w.mean_cosine));
        }
    }
    out
}

/// Monotonicity in snr of the mean rows of `encoder`, allowing one inversion
/// of at most `slack` per statistic.
pub fn monotonicity_violations(report: &StabilityReport, encoder: &str, slack: f64) -> Vec<String> {
    let mut rows: Vec<&StabilityRow> = report.means.iter().filter(|r| r.encoder == encoder).collect();
    rows.sort_by(|a, b| a.snr.total_cmp(&b.snr));
    let mut out = Vec::new();
    let (mut cr_inv, mut cos_inv) = (0, 0);
    for w in rows.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let cr_up = hi.change_rate - lo.change_rate;
        if cr_up > 0.0 {
            cr_inv += 1;
            if cr_up > slack || cr_inv > 1 {
                out.push(format!("{encoder}: change rate rises from snr {} to {} by {cr_up:.4}", lo.snr, hi.snr));
            }
        }
        let cos_down = lo.mean_cosine - hi.mean_cosine;
        if cos_down > 0.0 {
            cos_inv += 1;
            if cos_down > slack || cos_inv > 1 {
                out.push(format!("{encoder}: cosine falls from snr {} to {} by {cos_down:.4}", lo.snr, hi.snr));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(seed: u64, side: usize) -> ImageGrid {
        let mut rng = Rng::new(seed);
        ImageGrid::new(side, side, 1, (0..side * side).map(|_| rng.uniform() as f32).collect()).unwrap()
    }

    #[test]
    fn noise_power_matches_snr() {
        let img = random_image(1, 64);
        let noise = noise_field(&img, 1.0, 9).unwrap();
        let power = noise.iter().map(|e| e * e).sum::<f64>() / noise.len() as f64;
        let signal = img.signal_power();
        assert!((power / signal - 1.0).abs() < 0.05, "{power} vs {signal}");
    }

    #[test]
    fn infinite_snr_and_constant_images_are_untouched() {
        let img = random_image(2, 16);
        assert_eq!(add_noise_snr(&img, f64::INFINITY, 3).unwrap(), img);
        let flat = ImageGrid::constant(16, 16, 1, 0.4);
        assert_eq!(add_noise_snr(&flat, 0.01, 3).unwrap(), flat);
        assert!(add_noise_snr(&img, 0.0, 3).is_err());
        assert!(add_noise_snr(&img, -1.0, 3).is_err());
    }

    #[test]
    fn noise_is_seeded() {
        let img = random_image(3, 16);
        assert_eq!(add_noise_snr(&img, 5.0, 4).unwrap(), add_noise_snr(&img, 5.0, 4).unwrap());
        assert_ne!(add_noise_snr(&img, 5.0, 4).unwrap(), add_noise_snr(&img, 5.0, 5).unwrap());
    }

    #[test]
    fn change_rate_counts() {
        let a = TokenGrid::new(8, 8, vec![0; 64]).unwrap();
        let mut t = vec![0u32; 64];
        t[..16].iter_mut().for_each(|v| *v = 1);
        assert_eq!(token_change_rate(&a, &a).unwrap(), 0.0);
        assert_eq!(token_change_rate(&a, &TokenGrid::new(8, 8, t).unwrap()).unwrap(), 0.25);
        assert_eq!(token_change_rate(&a, &TokenGrid::new(8, 8, vec![3; 64]).unwrap()).unwrap(), 1.0);
        assert!(token_change_rate(&a, &TokenGrid::new(4, 4, vec![0; 16]).unwrap()).is_err());
    }

    #[test]
    fn cosine_cases() {
        let a = FeatureGrid::new(1, 2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        let neg = FeatureGrid::new(1, 2, 2, vec![-1.0, 0.0, 0.0, -2.0]).unwrap();
        let orth = FeatureGrid::new(1, 2, 2, vec![0.0, 1.0, 3.0, 0.0]).unwrap();
        assert!((feature_cosine(&a, &a).unwrap().mean - 1.0).abs() < 1e-12);
        assert!((feature_cosine(&a, &neg).unwrap().mean + 1.0).abs() < 1e-12);
        assert!(feature_cosine(&a, &orth).unwrap().mean.abs() < 1e-12);
        let half = FeatureGrid::new(1, 2, 2, vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        let s = feature_cosine(&a, &half).unwrap();
        assert_eq!((s.mean, s.excluded), (1.0, 1));
        let zero = FeatureGrid::new(1, 2, 2, vec![0.0; 4]).unwrap();
        assert!(feature_cosine(&zero, &zero).is_err());
    }
}
