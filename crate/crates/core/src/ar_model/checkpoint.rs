//! AR checkpoints.
//!
//! Layout (little-endian): magic `DGAR`, u32 version, config block, then every
//! parameter as f32 in the order documented on [`ArModel`].
//!
//! Config block: u32 layers, model_dim, heads, ffn_dim, vocab tokens, vocab
//! aux, vocab classes, max_len; f64 dropout; f64 beta1, beta2, peak_lr; u32
//! warmup; f64 grad_clip; u32 steps, batch.

use std::fs;
use std::path::Path;

use super::config::{ArConfig, ArOptimizer, VocabLayout};
use super::model::ArModel;
use crate::error::{Error, Result};
use crate::format::{checked_volume, ByteReader, ByteWriter};
use crate::numerics::Matrix;

pub const AR_MAGIC: &[u8; 4] = b"DGAR";
pub const AR_VERSION: u32 = 1;

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Overflow(format!("{what} = {v}")))
}

pub fn ar_to_bytes(model: &ArModel) -> Result<Vec<u8>> {
    let c = &model.cfg;
    let mut w = ByteWriter::new();
    w.magic(AR_MAGIC).u32(AR_VERSION);
    for (v, name) in [
        (c.layers, "layers"),
        (c.model_dim, "model_dim"),
        (c.heads, "heads"),
        (c.ffn_dim, "ffn_dim"),
        (c.vocab.tokens, "vocab tokens"),
        (c.vocab.aux, "vocab aux"),
        (c.vocab.classes, "vocab classes"),
        (c.max_len, "max_len"),
    ] {
        w.u32(to_u32(v, name)?);
    }
    w.f64(c.dropout).f64(c.optimizer.beta1).f64(c.optimizer.beta2).f64(c.optimizer.peak_lr);
    w.u32(to_u32(c.optimizer.warmup, "warmup")?).f64(c.optimizer.grad_clip);
    w.u32(to_u32(c.steps, "steps")?).u32(to_u32(c.batch, "batch")?);
    for p in &model.params {
        w.f32s(p.data().iter().map(|&v| v as f32));
    }
    Ok(w.into_bytes())
}

pub fn ar_from_bytes(bytes: &[u8]) -> Result<ArModel> {
    let mut r = ByteReader::new(bytes);
    r.magic(AR_MAGIC)?;
    let version = r.u32()?;
    if version != AR_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let mut u = || r.u32().map(|v| v as usize);
    let (layers, model_dim, heads, ffn_dim) = (u()?, u()?, u()?, u()?);
    let vocab = VocabLayout { tokens: u()?, aux: u()?, classes: u()? };
    let max_len = u()?;
    let dropout = r.f64()?;
    let (beta1, beta2, peak_lr) = (r.f64()?, r.f64()?, r.f64()?);
    let warmup = r.u32()? as usize;
    let grad_clip = r.f64()?;
    let (steps, batch) = (r.u32()? as usize, r.u32()? as usize);
    let cfg = ArConfig {
        layers,
        model_dim,
        heads,
        ffn_dim,
        vocab,
        max_len,
        dropout,
        optimizer: ArOptimizer { beta1, beta2, peak_lr, warmup, grad_clip },
        steps,
        batch,
    };
    cfg.validate().map_err(|e| Error::Malformed(format!("checkpoint config: {e}")))?;
    let mut params = Vec::new();
    for (rows, cols) in ArModel::param_shapes(&cfg) {
        let n = checked_volume(&[to_u32(rows, "rows")?, to_u32(cols, "cols")?])?;
        let data = r.f32s(n)?.into_iter().map(f64::from).collect();
        params.push(Matrix::from_vec(rows, cols, data)?);
    }
    r.finish()?;
    Ok(ArModel { cfg, params, log: Vec::new() })
}

pub fn save_ar(path: &Path, model: &ArModel) -> Result<()> {
    fs::write(path, ar_to_bytes(model)?)?;
    Ok(())
}

pub fn load_ar(path: &Path) -> Result<ArModel> {
    ar_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cfg = ArConfig {
            layers: 2,
            model_dim: 8,
            heads: 2,
            ffn_dim: 12,
            vocab: VocabLayout { tokens: 5, aux: 2, classes: 3 },
            max_len: 9,
            ..Default::default()
        };
        let mut m = ArModel::new(&cfg, 5).unwrap();
        m.round_to_f32();
        let bytes = ar_to_bytes(&m).unwrap();
        assert_eq!(&bytes[..4], b"DGAR");
        assert_eq!(ar_from_bytes(&bytes).unwrap(), m);
        assert!(ar_from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(ar_from_bytes(&bad), Err(Error::UnsupportedVersion(9))));
    }
}
