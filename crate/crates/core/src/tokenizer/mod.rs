//! Discrete tokenizer: K-Means codebook over encoder features, nearest-centroid
//! quantization and raster-order flattening.

pub mod codebook;
pub mod kmeans;
pub mod tokens;

pub use codebook::{embed_tokens, quantize, quantize_all, Codebook, FitMeta};
pub use kmeans::{kmeans_fit, KMeansConfig, KMeansFit};
pub use tokens::{
    flatten_raster, load_token_file, unflatten, write_token_file, TokenGrid, TokenSequence,
};

use crate::data::{subsample_fraction, FeatureGrid};
use crate::error::{Error, Result};

/// Default share of training images whose features feed the codebook fit.
pub const DEFAULT_SUBSET_FRACTION: f64 = 0.10;

/// Fits a codebook on every cell of a random `fraction` of `grids`.
pub fn fit_codebook(grids: &[FeatureGrid], cfg: &KMeansConfig, fraction: f64) -> Result<KMeansFit> {
    let first = grids.first().ok_or_else(|| Error::InvalidArgument("no feature grids".into()))?;
    let dim = first.d();
    let chosen = subsample_fraction(grids.len(), fraction, cfg.seed)?;
    let mut points = Vec::with_capacity(chosen.len() * first.cells() * dim);
    for &i in &chosen {
        if grids[i].d() != dim {
            return Err(Error::Shape("feature grids disagree on dimension".into()));
        }
        points.extend_from_slice(grids[i].data());
    }
    let mut fit = kmeans_fit(&points, dim, cfg)?;
    fit.codebook.set_subset_fraction(fraction);
    Ok(fit)
}
