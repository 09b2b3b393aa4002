//! Hash-keyed artifact cache under `<out>/artifacts`.
//!
//! Every artifact file name carries a digest of everything that determines
//! it (config sections, seeds and upstream digests), so a cached file is
//! reused only when an identical computation would reproduce it.

use std::cell::OnceCell;
use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::ar_model::{
    load_ar, save_ar, sequence_examples, stage2_vocab, write_train_log, train_ar, train_stage2, ArModel, VocabLayout,
};
use crate::data::{generate_toy_dataset, FeatureGrid, ToyDataset};
use crate::encoders::{
    load_decoder, load_encoder, save_decoder, save_encoder, train_discriminative, train_pixel_decoder,
    train_reconstructive, Level, Objective, PatchEncoder, PixelDecoder,
};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::par;
use crate::tokenizer::{fit_codebook, flatten_raster, quantize_all, Codebook, TokenGrid, TokenSequence};

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn digest<T: Serialize>(parts: &T) -> String {
    let json = serde_json::to_vec(parts).expect("key parts serialize");
    sha256_hex(&json)[..16].to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Stage ids for seed derivation.
pub(crate) mod stage {
    pub const DATASET: u64 = 1;
    pub const RECON: u64 = 2;
    pub const DISC: u64 = 3;
    pub const CODEBOOK: u64 = 4;
    pub const DECODER: u64 = 5;
    pub const AR: u64 = 6;
    pub const STAGE2: u64 = 7;
    pub const AGREEMENT: u64 = 8;
}

pub struct Workspace {
    pub cfg: RunConfig,
    dir: PathBuf,
    data: OnceCell<(ToyDataset, ToyDataset)>,
    used: std::cell::RefCell<BTreeSet<String>>,
    train: bool,
}

impl Workspace {
    pub fn new(out: &Path, cfg: RunConfig) -> Result<Self> {
        let dir = out.join("artifacts");
        fs::create_dir_all(&dir)?;
        Ok(Self { cfg, dir, data: OnceCell::new(), used: Default::default(), train: true })
    }

    /// With training off, a missing artifact is an error instead of being built.
    pub fn with_training(mut self, train: bool) -> Self {
        self.train = train;
        self
    }

    fn require(&self, path: &Path) -> Result<()> {
        if self.train || path.exists() {
            Ok(())
        } else {
            Err(missing(&path.display().to_string()))
        }
    }

    pub fn stage_seed(&self, stage: u64, sub: u64) -> u64 {
        Rng::new(self.cfg.seed).split(stage).split(sub).seed()
    }

    /// Artifact file names touched so far, sorted.
    pub fn used_artifacts(&self) -> Vec<String> {
        self.used.borrow().iter().cloned().collect()
    }

    fn path(&self, name: String) -> PathBuf {
        self.used.borrow_mut().insert(name.clone());
        self.dir.join(name)
    }

    fn cached<T>(&self, path: &Path, load: impl Fn(&Path) -> Result<T>, make: impl FnOnce() -> Result<T>, save: impl Fn(&Path, &T) -> Result<()>) -> Result<T> {
        if path.exists() {
            return load(path);
        }
        self.require(path)?;
        let value = make()?;
        let tmp = path.with_extension("partial");
        save(&tmp, &value)?;
        fs::rename(&tmp, path)?;
        Ok(value)
    }

    pub fn dataset(&self) -> Result<&(ToyDataset, ToyDataset)> {
        if self.data.get().is_none() {
            let d = &self.cfg.dataset;
            let all = generate_toy_dataset(&d.spec, d.n_train + d.n_test, self.stage_seed(stage::DATASET, 0))?;
            let _ = self.data.set(all.split(d.n_train));
        }
        Ok(self.data.get().expect("just set"))
    }

    pub fn class_count(&self) -> usize {
        self.cfg.dataset.spec.class_count()
    }

    fn dataset_key(&self) -> String {
        digest(&(&self.cfg.dataset, self.cfg.seed))
    }

    fn encoder_key(&self, objective: Objective) -> String {
        match objective {
            Objective::Reconstructive => digest(&("recon", self.dataset_key(), &self.cfg.recon_encoder)),
            Objective::Discriminative => digest(&("disc", self.dataset_key(), &self.cfg.disc_encoder)),
        }
    }

    /// Trained encoder; the reconstructive one also has its feature decoder cached.
    pub fn encoder(&self, objective: Objective) -> Result<PatchEncoder> {
        let key = self.encoder_key(objective);
        let tag = objective.tag();
        let enc_path = self.path(format!("encoder-{tag}-{key}.dgmd"));
        if enc_path.exists() {
            return load_encoder(&enc_path);
        }
        self.require(&enc_path)?;
        let (train, _) = self.dataset()?;
        match objective {
            Objective::Reconstructive => {
                let dec_path = self.path(format!("feature-decoder-recon-{key}.dgmd"));
                let (enc, dec) = train_reconstructive(&train.images, &self.cfg.recon_encoder, self.stage_seed(stage::RECON, 0))?;
                save_decoder(&dec_path, &dec)?;
                save_encoder(&enc_path, &enc)?;
                Ok(enc)
            }
            Objective::Discriminative => {
                let enc = train_discriminative(&train.images, &self.cfg.disc_encoder, Level::Patch, self.stage_seed(stage::DISC, 0))?;
                save_encoder(&enc_path, &enc)?;
                Ok(enc)
            }
        }
    }

    pub fn feature_decoder(&self) -> Result<PixelDecoder> {
        self.encoder(Objective::Reconstructive)?;
        load_decoder(&self.path(format!("feature-decoder-recon-{}.dgmd", self.encoder_key(Objective::Reconstructive))))
    }

    pub fn features(&self, objective: Objective, split: Split) -> Result<Vec<FeatureGrid>> {
        let enc = self.encoder(objective)?;
        let (train, test) = self.dataset()?;
        let images = if split == Split::Train { &train.images } else { &test.images };
        enc.encode_batch(images, None)
    }

    fn codebook_key(&self, objective: Objective, k: usize, seed: u64) -> String {
        digest(&(self.encoder_key(objective), &self.cfg.codebook, k, seed))
    }

    pub fn codebook(&self, objective: Objective, k: usize, seed: u64) -> Result<Codebook> {
        let path = self.path(format!("codebook-{}-k{k}-s{seed}-{}.dgcb", objective.tag(), self.codebook_key(objective, k, seed)));
        self.cached(
            &path,
            Codebook::load,
            || {
                let feats = self.features(objective, Split::Train)?;
                let km = self.cfg.codebook.kmeans(k, self.stage_seed(stage::CODEBOOK, seed));
                Ok(fit_codebook(&feats, &km, self.cfg.codebook.subset_fraction)?.codebook)
            },
            |p, cb| cb.save(p),
        )
    }

    pub fn tokens(&self, objective: Objective, k: usize, seed: u64, split: Split) -> Result<Vec<TokenGrid>> {
        let cb = self.codebook(objective, k, seed)?;
        quantize_all(&self.features(objective, split)?, &cb)
    }

    pub fn pixel_decoder(&self, objective: Objective, k: usize, seed: u64) -> Result<PixelDecoder> {
        let key = digest(&(self.codebook_key(objective, k, seed), &self.cfg.pixel_decoder));
        let path = self.path(format!("pixel-decoder-{}-k{k}-s{seed}-{key}.dgmd", objective.tag()));
        self.cached(
            &path,
            load_decoder,
            || {
                let cb = self.codebook(objective, k, seed)?;
                let tokens = self.tokens(objective, k, seed, Split::Train)?;
                let (train, _) = self.dataset()?;
                let patch = self.cfg.recon_encoder.patch_size;
                train_pixel_decoder(&tokens, &cb, &train.images, patch, &self.cfg.pixel_decoder, self.stage_seed(stage::DECODER, seed))
            },
            save_decoder,
        )
    }

    pub fn ar_config(&self, k: usize, conditional: bool) -> crate::ar_model::ArConfig {
        let classes = if conditional { self.class_count() } else { 0 };
        crate::ar_model::ArConfig { vocab: VocabLayout::new(k, classes), ..self.cfg.ar.clone() }
    }

    /// Raster sequences of one split; conditional ones lead with the class token.
    pub fn sequences(&self, objective: Objective, k: usize, seed: u64, split: Split, conditional: bool) -> Result<Vec<TokenSequence>> {
        let (train, test) = self.dataset()?;
        let labels = if split == Split::Train { &train.labels } else { &test.labels };
        let tokens = self.tokens(objective, k, seed, split)?;
        Ok(tokens
            .iter()
            .zip(labels)
            .map(|(t, &l)| flatten_raster(t, conditional.then_some(l), k))
            .collect())
    }

    pub fn ar(&self, objective: Objective, k: usize, seed: u64, conditional: bool) -> Result<ArModel> {
        Ok(self.ar_with_log(objective, k, seed, conditional)?.0)
    }

    /// The model and the path of its training-log CSV, written next to the checkpoint.
    pub fn ar_with_log(&self, objective: Objective, k: usize, seed: u64, conditional: bool) -> Result<(ArModel, PathBuf)> {
        let cfg = self.ar_config(k, conditional);
        let key = digest(&(self.codebook_key(objective, k, seed), &cfg));
        let c = if conditional { "cond" } else { "uncond" };
        let path = self.path(format!("ar-{}-{c}-k{k}-s{seed}-{key}.dgar", objective.tag()));
        let model = self.cached(
            &path,
            load_ar,
            || {
                let seqs = self.sequences(objective, k, seed, Split::Train, conditional)?;
                train_ar(&sequence_examples(&seqs, &cfg.vocab), &cfg, self.stage_seed(stage::AR, seed))
            },
            save_with_log,
        )?;
        Ok((model, path.with_extension("log.csv")))
    }

    /// Disc-token → recon-token pairs of one split at codebook size `k`.
    pub fn stage2_pairs(&self, k: usize, split: Split) -> Result<Vec<(TokenGrid, TokenGrid)>> {
        let disc = self.tokens(Objective::Discriminative, k, 0, split)?;
        let recon = self.tokens(Objective::Reconstructive, k, 0, split)?;
        Ok(disc.into_iter().zip(recon).collect())
    }

    pub fn stage2(&self, k: usize) -> Result<ArModel> {
        Ok(self.stage2_with_log(k)?.0)
    }

    pub fn stage2_with_log(&self, k: usize) -> Result<(ArModel, PathBuf)> {
        let cfg = crate::ar_model::ArConfig { vocab: stage2_vocab(k, k), ..self.cfg.stage2.clone() };
        let key = digest(&(
            self.codebook_key(Objective::Discriminative, k, 0),
            self.codebook_key(Objective::Reconstructive, k, 0),
            &cfg,
        ));
        let path = self.path(format!("stage2-k{k}-{key}.dgar"));
        let model = self.cached(
            &path,
            load_ar,
            || train_stage2(&self.stage2_pairs(k, Split::Train)?, &cfg, self.stage_seed(stage::STAGE2, 0)),
            save_with_log,
        )?;
        Ok((model, path.with_extension("log.csv")))
    }

    /// Pixel rows of a split, one image per row.
    pub fn pixel_matrix(&self, split: Split) -> Result<crate::numerics::Matrix> {
        let (train, test) = self.dataset()?;
        let images = if split == Split::Train { &train.images } else { &test.images };
        let rows = par::map(images, |img| img.values().iter().map(|&v| v as f64).collect::<Vec<f64>>());
        crate::numerics::Matrix::from_rows(&rows)
    }
}

fn save_with_log(path: &Path, model: &ArModel) -> Result<()> {
    write_train_log(&path.with_extension("log.csv"), &model.log)?;
    save_ar(path, model)
}

fn missing(what: &str) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("missing input {what} (training disabled)")))
}
