//! Feature (`DGTF`) and image (`DGIM`) tensor files.
//!
//! Layout: 4-byte magic, u32 version (= 1), u32 n, u32 h, u32 w, u32 d, then
//! `n·h·w·d` little-endian f32 values, n outermost and d innermost. Image files
//! store channels in the `d` slot.

use std::fs;
use std::path::Path;

use super::grid::{FeatureGrid, ImageGrid};
use crate::error::{Error, Result};
use crate::format::{checked_volume, ByteReader, ByteWriter};

pub const FEATURE_MAGIC: &[u8; 4] = b"DGTF";
pub const IMAGE_MAGIC: &[u8; 4] = b"DGIM";
pub const TENSOR_VERSION: u32 = 1;

struct Tensor4 {
    dims: [usize; 4],
    payload: Vec<f32>,
}

fn encode(magic: &[u8; 4], dims: [usize; 4], payload: impl IntoIterator<Item = f32>) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.magic(magic).u32(TENSOR_VERSION);
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Overflow(format!("dimension {d} exceeds u32")))?;
        w.u32(d);
    }
    w.f32s(payload);
    Ok(w.into_bytes())
}

fn decode(magic: &[u8; 4], bytes: &[u8]) -> Result<Tensor4> {
    let mut r = ByteReader::new(bytes);
    r.magic(magic)?;
    let version = r.u32()?;
    if version != TENSOR_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let raw = [r.u32()?, r.u32()?, r.u32()?, r.u32()?];
    let count = checked_volume(&raw)?;
    count
        .checked_mul(4)
        .ok_or_else(|| Error::Overflow(format!("payload of {count} f32 values")))?;
    let payload = r.f32s(count)?;
    r.finish()?;
    Ok(Tensor4 { dims: raw.map(|d| d as usize), payload })
}

pub fn encode_feature_grids(grids: &[FeatureGrid]) -> Result<Vec<u8>> {
    let (h, w, d) = grids.first().map_or((0, 0, 0), |g| (g.h(), g.w(), g.d()));
    if grids.iter().any(|g| (g.h(), g.w(), g.d()) != (h, w, d)) {
        return Err(Error::Shape("all feature grids in a file must share h, w, d".into()));
    }
    encode(FEATURE_MAGIC, [grids.len(), h, w, d], grids.iter().flat_map(|g| g.data().iter().copied()))
}

pub fn decode_feature_grids(bytes: &[u8]) -> Result<Vec<FeatureGrid>> {
    let t = decode(FEATURE_MAGIC, bytes)?;
    let [n, h, w, d] = t.dims;
    let per = h * w * d;
    (0..n)
        .map(|i| FeatureGrid::new(h, w, d, t.payload[i * per..(i + 1) * per].to_vec()))
        .collect()
}

pub fn write_feature_file(path: &Path, grids: &[FeatureGrid]) -> Result<()> {
    fs::write(path, encode_feature_grids(grids)?)?;
    Ok(())
}

pub fn load_feature_file(path: &Path) -> Result<Vec<FeatureGrid>> {
    decode_feature_grids(&fs::read(path)?)
}

pub fn encode_images(images: &[ImageGrid]) -> Result<Vec<u8>> {
    let (h, w, c) = images.first().map_or((0, 0, 0), |g| (g.height(), g.width(), g.channels()));
    if images.iter().any(|g| (g.height(), g.width(), g.channels()) != (h, w, c)) {
        return Err(Error::Shape("all images in a file must share dimensions".into()));
    }
    encode(IMAGE_MAGIC, [images.len(), h, w, c], images.iter().flat_map(|g| g.values().iter().copied()))
}

pub fn decode_images(bytes: &[u8]) -> Result<Vec<ImageGrid>> {
    let t = decode(IMAGE_MAGIC, bytes)?;
    let [n, h, w, c] = t.dims;
    let per = h * w * c;
    (0..n).map(|i| ImageGrid::new(h, w, c, t.payload[i * per..(i + 1) * per].to_vec())).collect()
}

pub fn write_image_file(path: &Path, images: &[ImageGrid]) -> Result<()> {
    fs::write(path, encode_images(images)?)?;
    Ok(())
}

pub fn load_image_file(path: &Path) -> Result<Vec<ImageGrid>> {
    decode_images(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn random_grids(n: usize, h: usize, w: usize, d: usize, seed: u64) -> Vec<FeatureGrid> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|_| FeatureGrid::new(h, w, d, (0..h * w * d).map(|_| rng.normal() as f32).collect()).unwrap())
            .collect()
    }

    #[test]
    fn feature_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.dgtf");
        let grids = random_grids(2, 4, 4, 8, 1);
        write_feature_file(&path, &grids).unwrap();
        assert_eq!(load_feature_file(&path).unwrap(), grids);
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"DGTF");
        assert_eq!(bytes.len(), 24 + 2 * 4 * 4 * 8 * 4);
    }

    #[test]
    fn truncated_reports_sizes() {
        let bytes = encode_feature_grids(&random_grids(2, 4, 4, 8, 2)).unwrap();
        let cut = &bytes[..bytes.len() - 5];
        match decode_feature_grids(cut) {
            Err(Error::Truncated { expected, actual }) => {
                assert_eq!(expected, bytes.len() as u64);
                assert_eq!(actual, cut.len() as u64);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overflow_and_magic_errors() {
        let mut w = ByteWriter::new();
        w.magic(FEATURE_MAGIC).u32(1).u32(u32::MAX).u32(u32::MAX).u32(u32::MAX).u32(u32::MAX);
        assert!(matches!(decode_feature_grids(&w.into_bytes()), Err(Error::Overflow(_))));

        let bytes = encode_feature_grids(&random_grids(1, 2, 2, 2, 3)).unwrap();
        assert!(matches!(decode_images(&bytes), Err(Error::BadMagic { .. })));
        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        assert!(matches!(decode_feature_grids(&wrong_version), Err(Error::UnsupportedVersion(9))));
    }

    #[test]
    fn image_round_trip() {
        let img = ImageGrid::new(2, 2, 1, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        let bytes = encode_images(&[img.clone(), img.flip_horizontal()]).unwrap();
        assert_eq!(&bytes[..4], b"DGIM");
        let back = decode_images(&bytes).unwrap();
        assert_eq!(back[0], img);
        assert_eq!(back[1].values(), &[0.25, 0.0, 1.0, 0.5]);
    }
}
