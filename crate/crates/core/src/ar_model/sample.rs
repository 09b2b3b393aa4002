use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Decoding controls. `top_k = 0` and `top_p = 1` disable the truncations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub top_k: usize,
    pub top_p: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { top_k: 0, top_p: 0.8, temperature: 1.0, seed: 0 }
    }
}

impl SamplerConfig {
    /// Default truncation for a vocabulary of `vocab` ids: `top_k = vocab / 40`, `top_p = 0.8`.
    pub fn scaled_default(vocab: usize, seed: u64) -> Self {
        Self { top_k: (vocab / 40).max(1), top_p: 0.8, temperature: 1.0, seed }
    }

    /// Untruncated softmax sampling at temperature 1.
    pub fn pure(seed: u64) -> Self {
        Self { top_k: 0, top_p: 1.0, temperature: 1.0, seed }
    }

    pub fn greedy() -> Self {
        Self { top_k: 1, top_p: 1.0, temperature: 1.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        Ok(())
    }
}

/// Probabilities after temperature, top-k and top-p, renormalized.
///
/// Ids with score `-∞` never receive mass. Ties in the top-k cut keep the
/// lower id.
pub fn truncated_distribution(scores: &[f64], sampler: &SamplerConfig) -> Result<Vec<f64>> {
    sampler.validate()?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument("every score is -inf".into()));
    }
    let mut probs: Vec<f64> = scores.iter().map(|&s| ((s - max) / sampler.temperature).exp()).collect();
    let mut order: Vec<usize> = (0..scores.len()).filter(|&i| probs[i] > 0.0).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    if sampler.top_k > 0 && sampler.top_k < order.len() {
        for &i in &order[sampler.top_k..] {
            probs[i] = 0.0;
        }
        order.truncate(sampler.top_k);
    }
    let total: f64 = order.iter().map(|&i| probs[i]).sum();
    if sampler.top_p < 1.0 {
        let mut cum = 0.0;
        let mut keep = order.len();
        for (rank, &i) in order.iter().enumerate() {
            cum += probs[i] / total;
            if cum >= sampler.top_p {
                keep = rank + 1;
                break;
            }
        }
        for &i in &order[keep..] {
            probs[i] = 0.0;
        }
    }
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(probs)
}

pub fn sample_next(scores: &[f64], sampler: &SamplerConfig, rng: &mut Rng) -> Result<usize> {
    let probs = truncated_distribution(scores, sampler)?;
    rng.weighted_index(&probs).ok_or_else(|| Error::InvalidArgument("empty sampling support".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_softmax_values() {
        let p = truncated_distribution(&[2.0, 1.0, 0.0], &SamplerConfig::pure(0)).unwrap();
        for (a, b) in p.iter().zip([0.665, 0.245, 0.090]) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn temperature_sharpens() {
        let cold = SamplerConfig { temperature: 0.1, ..SamplerConfig::pure(0) };
        let p = truncated_distribution(&[2.0, 1.0, 0.0], &cold).unwrap();
        assert!(p[0] > 0.9999);
    }

    #[test]
    fn masked_scores_get_no_mass() {
        let p = truncated_distribution(&[f64::NEG_INFINITY, 0.0, 0.0], &SamplerConfig::pure(0)).unwrap();
        assert_eq!(p, vec![0.0, 0.5, 0.5]);
        assert!(truncated_distribution(&[f64::NEG_INFINITY; 2], &SamplerConfig::pure(0)).is_err());
    }

    #[test]
    fn rejects_bad_sampler() {
        let s = SamplerConfig { top_p: 0.0, ..Default::default() };
        assert!(truncated_distribution(&[1.0], &s).is_err());
    }
}
