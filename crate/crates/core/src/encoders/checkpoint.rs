//! Encoder/decoder checkpoints.
//!
//! Layout (little-endian): magic `DGMD`, u32 version, u32 kind (0 encoder,
//! 1 pixel decoder), then the header below, then every parameter as f32.
//!
//! * encoder: u32 objective (0 recon, 1 disc), u32 level (0 patch, 1 global),
//!   u32 patch size, u32 channels, u32 depth, depth+1 × u32 layer widths,
//!   depth × u32 activation tags; parameters per layer: weight (`in × out`,
//!   row-major) then bias; then u32 center count (0 or depth) and one f32
//!   center vector per layer.
//! * decoder: u32 patch size, u32 channels, u32 grid h, u32 grid w, u32 depth,
//!   widths and activation tags as above; parameters: positional table
//!   (`cells × in`), then the layers.

use std::fs;
use std::path::Path;

use super::decoder::PixelDecoder;
use super::mlp::{Activation, Mlp};
use super::patch::{Level, Objective, PatchEncoder};
use crate::error::{Error, Result};
use crate::format::{checked_volume, ByteReader, ByteWriter};
use crate::numerics::Matrix;

pub const MODEL_MAGIC: &[u8; 4] = b"DGMD";
pub const MODEL_VERSION: u32 = 1;
const KIND_ENCODER: u32 = 0;
const KIND_DECODER: u32 = 1;

fn write_mlp_header(w: &mut ByteWriter, mlp: &Mlp) {
    w.u32(mlp.depth() as u32);
    for d in mlp.layer_dims() {
        w.u32(d as u32);
    }
    for a in &mlp.acts {
        w.u32(a.tag());
    }
}

fn write_mlp_params(w: &mut ByteWriter, mlp: &Mlp) {
    for p in &mlp.params {
        w.f32s(p.data().iter().map(|&v| v as f32));
    }
}

fn read_matrix(r: &mut ByteReader, rows: u32, cols: u32) -> Result<Matrix> {
    let n = checked_volume(&[rows, cols])?;
    let data = r.f32s(n)?.into_iter().map(f64::from).collect();
    Matrix::from_vec(rows as usize, cols as usize, data)
}

/// Reads the widths/activations header and returns a zeroed skeleton.
fn read_mlp_header(r: &mut ByteReader) -> Result<(Vec<u32>, Vec<Activation>)> {
    let depth = r.u32()?;
    if depth == 0 || depth > 64 {
        return Err(Error::Malformed(format!("implausible layer count {depth}")));
    }
    r.require_words(2 * depth as usize + 1)?;
    let dims: Vec<u32> = (0..=depth).map(|_| r.u32()).collect::<Result<_>>()?;
    let acts = (0..depth).map(|_| Activation::from_tag(r.u32()?)).collect::<Result<_>>()?;
    Ok((dims, acts))
}

fn read_mlp_params(r: &mut ByteReader, dims: &[u32], acts: Vec<Activation>) -> Result<Mlp> {
    let mut params = Vec::with_capacity(2 * acts.len());
    for w in dims.windows(2) {
        params.push(read_matrix(r, w[0], w[1])?);
        params.push(read_matrix(r, 1, w[1])?);
    }
    Ok(Mlp { params, acts })
}

pub fn encoder_to_bytes(enc: &PatchEncoder) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.magic(MODEL_MAGIC).u32(MODEL_VERSION).u32(KIND_ENCODER);
    w.u32(match enc.objective {
        Objective::Reconstructive => 0,
        Objective::Discriminative => 1,
    });
    w.u32(match enc.level {
        Level::Patch => 0,
        Level::Global => 1,
    });
    w.u32(enc.patch_size as u32).u32(enc.channels as u32);
    write_mlp_header(&mut w, &enc.mlp);
    write_mlp_params(&mut w, &enc.mlp);
    w.u32(enc.centers.len() as u32);
    for c in &enc.centers {
        w.f32s(c.iter().map(|&v| v as f32));
    }
    w.into_bytes()
}

fn read_preamble(r: &mut ByteReader, expected_kind: u32) -> Result<()> {
    r.magic(MODEL_MAGIC)?;
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let kind = r.u32()?;
    if kind != expected_kind {
        return Err(Error::Malformed(format!("checkpoint kind {kind}, expected {expected_kind}")));
    }
    Ok(())
}

pub fn encoder_from_bytes(bytes: &[u8]) -> Result<PatchEncoder> {
    let mut r = ByteReader::new(bytes);
    read_preamble(&mut r, KIND_ENCODER)?;
    let objective = match r.u32()? {
        0 => Objective::Reconstructive,
        1 => Objective::Discriminative,
        t => return Err(Error::Malformed(format!("unknown objective tag {t}"))),
    };
    let level = match r.u32()? {
        0 => Level::Patch,
        1 => Level::Global,
        t => return Err(Error::Malformed(format!("unknown level tag {t}"))),
    };
    let patch_size = r.u32()? as usize;
    let channels = r.u32()? as usize;
    let (dims, acts) = read_mlp_header(&mut r)?;
    if dims[0] as usize != patch_size * patch_size * channels {
        return Err(Error::Malformed("input width disagrees with patch size and channels".into()));
    }
    let mlp = read_mlp_params(&mut r, &dims, acts)?;
    let count = r.u32()? as usize;
    if count != 0 && count != mlp.depth() {
        return Err(Error::Malformed(format!("{count} center vectors for depth {}", mlp.depth())));
    }
    let mut centers = Vec::with_capacity(count);
    for &width in dims[1..].iter().take(count) {
        centers.push(r.f32s(width as usize)?.into_iter().map(f64::from).collect());
    }
    r.finish()?;
    Ok(PatchEncoder { objective, level, patch_size, channels, mlp, centers, loss_trace: Vec::new() })
}

pub fn decoder_to_bytes(dec: &PixelDecoder) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.magic(MODEL_MAGIC).u32(MODEL_VERSION).u32(KIND_DECODER);
    w.u32(dec.patch_size as u32).u32(dec.channels as u32).u32(dec.grid_h as u32).u32(dec.grid_w as u32);
    write_mlp_header(&mut w, &dec.mlp);
    w.f32s(dec.pos.data().iter().map(|&v| v as f32));
    write_mlp_params(&mut w, &dec.mlp);
    w.into_bytes()
}

pub fn decoder_from_bytes(bytes: &[u8]) -> Result<PixelDecoder> {
    let mut r = ByteReader::new(bytes);
    read_preamble(&mut r, KIND_DECODER)?;
    let (patch_size, channels, gh, gw) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let (dims, acts) = read_mlp_header(&mut r)?;
    let pos = read_matrix(&mut r, checked_volume(&[gh, gw])? as u32, dims[0])?;
    let mlp = read_mlp_params(&mut r, &dims, acts)?;
    r.finish()?;
    if mlp.out_dim() != (patch_size * patch_size * channels) as usize {
        return Err(Error::Malformed("decoder output width disagrees with patch size".into()));
    }
    Ok(PixelDecoder {
        grid_h: gh as usize,
        grid_w: gw as usize,
        patch_size: patch_size as usize,
        channels: channels as usize,
        pos,
        mlp,
        loss_trace: Vec::new(),
    })
}

pub fn save_encoder(path: &Path, enc: &PatchEncoder) -> Result<()> {
    fs::write(path, encoder_to_bytes(enc))?;
    Ok(())
}

pub fn load_encoder(path: &Path) -> Result<PatchEncoder> {
    encoder_from_bytes(&fs::read(path)?)
}

pub fn save_decoder(path: &Path, dec: &PixelDecoder) -> Result<()> {
    fs::write(path, decoder_to_bytes(dec))?;
    Ok(())
}

pub fn load_decoder(path: &Path) -> Result<PixelDecoder> {
    decoder_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{untrained_discriminative, EncoderConfig};
    use crate::numerics::Rng;

    #[test]
    fn encoder_round_trip_is_exact() {
        let mut enc = untrained_discriminative(4, 1, &EncoderConfig::default(), 3);
        enc.mlp.round_to_f32();
        let img = crate::data::ImageGrid::constant(8, 8, 1, 0.3);
        enc.fit_centers(&[img]).unwrap();
        let bytes = encoder_to_bytes(&enc);
        assert_eq!(&bytes[..4], b"DGMD");
        assert_eq!(encoder_from_bytes(&bytes).unwrap(), enc);
        assert!(matches!(encoder_from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
        assert!(decoder_from_bytes(&bytes).is_err());
    }

    #[test]
    fn decoder_round_trip_is_exact() {
        let mut rng = Rng::new(1);
        let mut dec = PixelDecoder::new(2, 3, 4, 1, 5, 7, &mut rng);
        dec.pos = Matrix::from_fn(6, 5, |_, _| rng.normal());
        dec.round_to_f32();
        let back = decoder_from_bytes(&decoder_to_bytes(&dec)).unwrap();
        assert_eq!(back, dec);
    }
}
