use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::RunConfig;
use super::workspace::sha256_hex;
use crate::ar_model::train::csv_err;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ExperimentKind {
    Toy2d,
    PropCheck,
    TrainEncoder,
    FitCodebook,
    Tokenize,
    Stability,
    TokenizeAblation,
    TrainAr,
    TrainStage2,
    Generate,
    Probe,
    PrefixSweep,
    Report,
}

impl ExperimentKind {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Toy2d => "toy2d",
            Self::PropCheck => "prop-check",
            Self::TrainEncoder => "train-encoder",
            Self::FitCodebook => "fit-codebook",
            Self::Tokenize => "tokenize",
            Self::Stability => "stability",
            Self::TokenizeAblation => "tokenize-ablation",
            Self::TrainAr => "train-ar",
            Self::TrainStage2 => "train-stage2",
            Self::Generate => "generate",
            Self::Probe => "probe",
            Self::PrefixSweep => "prefix-sweep",
            Self::Report => "report",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::Toy2d => "noise-robust accuracy of 1D projections (PCA, LDA, linear InfoNCE) on two anisotropic Gaussians",
            Self::PropCheck => "subspace agreement between a converged linear autoencoder and PCA",
            Self::TrainEncoder => "patch encoder training summary",
            Self::FitCodebook => "K-Means codebook fit and token usage",
            Self::Tokenize => "token grids of the train and test splits",
            Self::Stability => "token change rate and feature cosine under additive Gaussian noise, reconstructive vs discriminative tokens",
            Self::TokenizeAblation => "per-layer linear-probe accuracy of AR models on discriminative tokens across codebook sizes",
            Self::TrainAr => "autoregressive token model training log and held-out likelihood",
            Self::TrainStage2 => "discriminative-to-reconstructive token translation model",
            Self::Generate => "toy-FID and latent objective terms of sampled images per tokenizer pipeline",
            Self::Probe => "per-layer linear probe of AR models on reconstructive vs discriminative tokens, with a pixel baseline",
            Self::PrefixSweep => "toy-FID of prefix completions across prefix fractions",
            Self::Report => "index of experiment manifests in the output directory",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct FileDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub description: String,
    pub config_sha256: String,
    pub seed: u64,
    pub crate_version: String,
    pub outputs: Vec<FileDigest>,
    pub artifacts: Vec<String>,
    pub gate_passed: bool,
    pub violations: Vec<String>,
}

/// Result of one experiment run: written files and invariant-gate violations.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub kind: ExperimentKind,
    pub files: Vec<PathBuf>,
    pub violations: Vec<String>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Collects the files of one experiment and writes its manifest last.
pub struct OutputSet {
    dir: PathBuf,
    kind: ExperimentKind,
    stem: String,
    files: Vec<FileDigest>,
    paths: Vec<PathBuf>,
}

impl OutputSet {
    pub fn new(dir: &Path, kind: ExperimentKind) -> Result<Self> {
        Self::labeled(dir, kind, "")
    }

    /// Like `new`; a nonempty `label` keeps manifests of parameterized runs apart.
    pub fn labeled(dir: &Path, kind: ExperimentKind, label: &str) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let stem = if label.is_empty() { kind.tag().to_string() } else { format!("{}-{label}", kind.tag()) };
        Ok(Self { dir: dir.to_path_buf(), kind, stem, files: Vec::new(), paths: Vec::new() })
    }

    pub fn stem(&self) -> &str {
        &self.stem
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        self.files.push(FileDigest { file: name.into(), sha256: sha256_hex(bytes) });
        self.paths.push(path);
        Ok(())
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| crate::error::Error::Io(e.into_error()))?;
        self.bytes(name, &bytes)
    }

    pub fn finish(mut self, cfg: &RunConfig, artifacts: Vec<String>, violations: Vec<String>) -> Result<Outcome> {
        let manifest = Manifest {
            kind: self.kind.tag().into(),
            description: self.kind.description().into(),
            config_sha256: sha256_hex(cfg.to_json().as_bytes()),
            seed: cfg.seed,
            crate_version: env!("CARGO_PKG_VERSION").into(),
            outputs: self.files.clone(),
            artifacts,
            gate_passed: violations.is_empty(),
            violations: violations.clone(),
        };
        let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        json.push('\n');
        let name = format!("{}_manifest.json", self.stem);
        self.bytes(&name, json.as_bytes())?;
        Ok(Outcome { kind: self.kind, files: self.paths, violations })
    }
}
