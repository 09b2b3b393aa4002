use std::fs;
use std::path::Path;

use super::kmeans::nearest;
use super::tokens::TokenGrid;
use crate::data::FeatureGrid;
use crate::error::{Error, Result};
use crate::format::{checked_volume, ByteReader, ByteWriter};
use crate::par;

pub const CODEBOOK_MAGIC: &[u8; 4] = b"DGCB";
pub const CODEBOOK_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FitMeta {
    pub seed: u64,
    pub iterations: usize,
    pub inertia: f64,
    /// Fraction of the training features the fit saw.
    pub subset_fraction: f64,
    pub sample_count: usize,
}

/// `K × D` centroid table; token id = index of the nearest centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    k: usize,
    dim: usize,
    centroids: Vec<f32>,
    centroids_f64: Vec<f64>,
    meta: FitMeta,
}

impl Codebook {
    pub fn new(k: usize, dim: usize, centroids: Vec<f32>, meta: FitMeta) -> Result<Self> {
        if k == 0 || dim == 0 {
            return Err(Error::InvalidArgument("codebook needs K >= 1 and D >= 1".into()));
        }
        if centroids.len() != k * dim {
            return Err(Error::Shape(format!("{} centroid values for K={k}, D={dim}", centroids.len())));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite centroid".into()));
        }
        let centroids_f64: Vec<f64> = centroids.iter().map(|&v| v as f64).collect();
        for i in 0..k {
            for j in (i + 1)..k {
                if centroids[i * dim..(i + 1) * dim] == centroids[j * dim..(j + 1) * dim] {
                    return Err(Error::InvalidArgument(format!("centroids {i} and {j} coincide")));
                }
            }
        }
        Ok(Self { k, dim, centroids, centroids_f64, meta })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn centroid(&self, id: usize) -> &[f32] {
        &self.centroids[id * self.dim..(id + 1) * self.dim]
    }

    pub fn meta(&self) -> &FitMeta {
        &self.meta
    }

    pub(crate) fn set_subset_fraction(&mut self, fraction: f64) {
        self.meta.subset_fraction = fraction;
    }

    /// Nearest centroid to a single vector (lowest index on ties), distances in f64.
    pub fn nearest(&self, v: &[f32]) -> usize {
        let p: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        nearest(&self.centroids_f64, self.dim, &p).0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.magic(CODEBOOK_MAGIC)
            .u32(CODEBOOK_VERSION)
            .u32(self.k as u32)
            .u32(self.dim as u32)
            .u64(self.meta.seed)
            .f64(self.meta.inertia)
            .f32s(self.centroids.iter().copied())
            .text(&format!(
                "iterations={};subset_fraction={};sample_count={}",
                self.meta.iterations, self.meta.subset_fraction, self.meta.sample_count
            ));
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(CODEBOOK_MAGIC)?;
        let version = r.u32()?;
        if version != CODEBOOK_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let k = r.u32()?;
        let dim = r.u32()?;
        let seed = r.u64()?;
        let inertia = r.f64()?;
        let count = checked_volume(&[k, dim])?;
        let centroids = r.f32s(count)?;
        let text = r.text()?;
        r.finish()?;
        let mut meta = FitMeta { seed, iterations: 0, inertia, subset_fraction: 1.0, sample_count: 0 };
        for field in text.split(';').filter(|f| !f.is_empty()) {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::Malformed(format!("metadata field {field:?}")))?;
            let bad = || Error::Malformed(format!("metadata value {field:?}"));
            match key {
                "iterations" => meta.iterations = value.parse().map_err(|_| bad())?,
                "subset_fraction" => meta.subset_fraction = value.parse().map_err(|_| bad())?,
                "sample_count" => meta.sample_count = value.parse().map_err(|_| bad())?,
                _ => {}
            }
        }
        Codebook::new(k as usize, dim as usize, centroids, meta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Assigns every cell to its nearest centroid.
pub fn quantize(grid: &FeatureGrid, codebook: &Codebook) -> Result<TokenGrid> {
    if grid.d() != codebook.dim() {
        return Err(Error::Shape(format!("feature dim {} vs codebook dim {}", grid.d(), codebook.dim())));
    }
    let tokens = grid.iter_cells().map(|cell| codebook.nearest(cell) as u32).collect();
    TokenGrid::new(grid.h(), grid.w(), tokens)
}

/// Quantizes a batch of grids, in parallel when enabled.
pub fn quantize_all(grids: &[FeatureGrid], codebook: &Codebook) -> Result<Vec<TokenGrid>> {
    par::map(grids, |g| quantize(g, codebook)).into_iter().collect()
}

/// Replaces every token with its centroid vector.
pub fn embed_tokens(tokens: &TokenGrid, codebook: &Codebook) -> Result<FeatureGrid> {
    let mut data = Vec::with_capacity(tokens.len() * codebook.dim());
    for &t in tokens.tokens() {
        if t as usize >= codebook.k() {
            return Err(Error::InvalidArgument(format!("token {t} out of range for K = {}", codebook.k())));
        }
        data.extend_from_slice(codebook.centroid(t as usize));
    }
    FeatureGrid::new(tokens.h(), tokens.w(), codebook.dim(), data)
}
