use serde::{Deserialize, Serialize};

use crate::ar_model::{ArConfig, PrefixConfig, ProbeConfig, SamplerConfig, DEFAULT_PREFIX_FRACS};
use crate::data::GeneratorSpec;
use crate::encoders::{DecoderConfig, EncoderConfig};
use crate::error::{Error, Result};
use crate::latent_lab::{InfoNceConfig, TwoGaussianSpec, DEFAULT_NOISE_SIGMAS};
use crate::stability::StabilityConfig;
use crate::tokenizer::{KMeansConfig, DEFAULT_SUBSET_FRACTION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub spec: GeneratorSpec,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { spec: GeneratorSpec::default(), n_train: 500, n_test: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodebookConfig {
    pub k: usize,
    pub subset_fraction: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        Self { k: 64, subset_fraction: DEFAULT_SUBSET_FRACTION, max_iters: 100, tol: 1e-6 }
    }
}

impl CodebookConfig {
    pub fn kmeans(&self, k: usize, seed: u64) -> KMeansConfig {
        KMeansConfig { k, max_iters: self.max_iters, tol: self.tol, seed }
    }
}

/// Sampler settings; `top_k: null` means `vocab / 40`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub top_k: Option<usize>,
    pub top_p: f64,
    pub temperature: f64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self { top_k: None, top_p: 0.8, temperature: 1.0 }
    }
}

impl SamplerSection {
    pub fn resolve(&self, vocab: usize, seed: u64) -> SamplerConfig {
        let auto = SamplerConfig::scaled_default(vocab, seed);
        SamplerConfig { top_k: self.top_k.unwrap_or(auto.top_k), top_p: self.top_p, temperature: self.temperature, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toy2dConfig {
    pub spec: TwoGaussianSpec,
    pub sigmas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub infonce: InfoNceConfig,
}

impl Default for Toy2dConfig {
    fn default() -> Self {
        Self {
            spec: TwoGaussianSpec::default(),
            sigmas: DEFAULT_NOISE_SIGMAS.to_vec(),
            seeds: (0..5).collect(),
            infonce: InfoNceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropCheckConfig {
    pub datasets: usize,
    pub n: usize,
    pub dim: usize,
    pub ms: Vec<usize>,
    pub steps: usize,
    pub lr: f64,
    /// Gate thresholds on the max principal angle (rad) and the pseudo-inverse residual.
    pub max_angle: f64,
    pub max_residual: f64,
}

impl Default for PropCheckConfig {
    fn default() -> Self {
        Self { datasets: 3, n: 500, dim: 10, ms: vec![2, 3], steps: 20_000, lr: 1e-2, max_angle: 1e-3, max_residual: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub probe: ProbeConfig,
    pub seeds: Vec<u64>,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self { probe: ProbeConfig::default(), seeds: vec![0, 1, 2] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { ks: vec![8, 16, 32, 64], seeds: vec![0, 1, 2] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub count: usize,
    pub conditional: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { count: 100, conditional: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrefixSection {
    pub fracs: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for PrefixSection {
    fn default() -> Self {
        Self { fracs: DEFAULT_PREFIX_FRACS.to_vec(), seeds: vec![0, 1, 2] }
    }
}

impl PrefixSection {
    pub fn resolve(&self, sampler: SamplerConfig) -> PrefixConfig {
        PrefixConfig { fracs: self.fracs.clone(), sampler, seeds: self.seeds.clone() }
    }
}

/// Every tunable of every experiment; missing keys take their defaults.
///
/// The `vocab` blocks of `ar` and `stage2` are filled from the codebook size
/// and class count at run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub recon_encoder: EncoderConfig,
    pub disc_encoder: EncoderConfig,
    pub codebook: CodebookConfig,
    pub pixel_decoder: DecoderConfig,
    pub ar: ArConfig,
    pub stage2: ArConfig,
    pub sampler: SamplerSection,
    pub stability: StabilityConfig,
    pub toy2d: Toy2dConfig,
    pub prop_check: PropCheckConfig,
    pub probe: ProbeSection,
    pub ablation: AblationConfig,
    pub generate: GenerateConfig,
    pub prefix: PrefixSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetConfig::default(),
            recon_encoder: EncoderConfig::default(),
            disc_encoder: EncoderConfig { steps: 6000, ..EncoderConfig::default() },
            codebook: CodebookConfig::default(),
            pixel_decoder: DecoderConfig::default(),
            ar: ArConfig::default(),
            stage2: ArConfig { max_len: 140, ..ArConfig::default() },
            sampler: SamplerSection::default(),
            stability: StabilityConfig::default(),
            toy2d: Toy2dConfig::default(),
            prop_check: PropCheckConfig::default(),
            probe: ProbeSection::default(),
            ablation: AblationConfig::default(),
            generate: GenerateConfig::default(),
            prefix: PrefixSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Structural checks that do not need any data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.dataset.spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.dataset.n_train < 2 || self.dataset.n_test < 2 {
            return bad("dataset.n_train and dataset.n_test must be at least 2".into());
        }
        let grid = self.dataset.spec.side / self.recon_encoder.patch_size.max(1);
        for (name, e) in [("recon_encoder", &self.recon_encoder), ("disc_encoder", &self.disc_encoder)] {
            if e.patch_size == 0 || self.dataset.spec.side % e.patch_size != 0 {
                return bad(format!("{name}.patch_size must divide the image side {}", self.dataset.spec.side));
            }
            if !(e.tau > 0.0) || e.steps == 0 || e.batch == 0 {
                return bad(format!("{name}: tau, steps and batch must be positive"));
            }
        }
        if self.recon_encoder.patch_size != self.disc_encoder.patch_size {
            return bad("both encoders must use the same patch_size".into());
        }
        let c = &self.codebook;
        if c.k == 0 || !(c.subset_fraction > 0.0 && c.subset_fraction <= 1.0) {
            return bad("codebook.k must be positive and subset_fraction in (0, 1]".into());
        }
        if self.ablation.ks.contains(&0) {
            return bad("ablation.ks must be positive".into());
        }
        let cells = grid * grid;
        for (name, a, need) in [("ar", &self.ar, cells + 1), ("stage2", &self.stage2, 2 * cells + 2)] {
            let probe = ArConfig { vocab: crate::ar_model::VocabLayout::new(1, 0), ..a.clone() };
            probe.validate().map_err(|e| Error::Config(format!("{name}: {e}")))?;
            if a.max_len < need {
                return bad(format!("{name}.max_len {} is below the required {need}", a.max_len));
            }
        }
        self.sampler.resolve(100, 0).validate()?;
        self.stability.validate().map_err(|e| Error::Config(e.to_string()))?;
        for (name, seeds) in [
            ("toy2d.seeds", &self.toy2d.seeds),
            ("probe.seeds", &self.probe.seeds),
            ("ablation.seeds", &self.ablation.seeds),
            ("prefix.seeds", &self.prefix.seeds),
        ] {
            if seeds.is_empty() {
                return bad(format!("{name} must not be empty"));
            }
        }
        if let Some(f) = self.prefix.fracs.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
            return bad(format!("prefix fraction {f} outside (0, 1)"));
        }
        if self.prop_check.ms.iter().any(|&m| m == 0 || m > self.prop_check.dim) {
            return bad("prop_check.ms must lie in 1..=dim".into());
        }
        if self.generate.count == 0 {
            return bad("generate.count must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"seed": 1, "sede": 2}"#), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"codebook": {"kk": 3}}"#), Err(Error::Config(_))));
    }

    #[test]
    fn partial_configs_fill_defaults() {
        let cfg = RunConfig::from_json(r#"{"codebook": {"k": 8}}"#).unwrap();
        assert_eq!(cfg.codebook.k, 8);
        assert_eq!(cfg.codebook.subset_fraction, DEFAULT_SUBSET_FRACTION);
    }
}
