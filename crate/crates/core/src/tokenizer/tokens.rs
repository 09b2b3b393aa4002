use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::format::{checked_volume, ByteReader, ByteWriter};

pub const TOKEN_MAGIC: &[u8; 4] = b"DGTK";

/// Discrete token ids on an `h × w` grid, raster order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenGrid {
    h: usize,
    w: usize,
    tokens: Vec<u32>,
}

impl TokenGrid {
    pub fn new(h: usize, w: usize, tokens: Vec<u32>) -> Result<Self> {
        if tokens.len() != h * w {
            return Err(Error::Shape(format!("{} tokens for a {h}x{w} grid", tokens.len())));
        }
        Ok(Self { h, w, tokens })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.tokens[row * self.w + col]
    }

    pub fn max_id(&self) -> Option<u32> {
        self.tokens.iter().copied().max()
    }
}

/// Flattened token ids, optionally led by a condition (class) id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub has_condition: bool,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids after the condition prefix.
    pub fn body(&self) -> &[u32] {
        if self.has_condition {
            &self.ids[1..]
        } else {
            &self.ids
        }
    }
}

/// Row-major flattening; a class `c` becomes the leading id `class_offset + c`.
pub fn flatten_raster(grid: &TokenGrid, condition: Option<usize>, class_offset: usize) -> TokenSequence {
    let mut ids = Vec::with_capacity(grid.len() + 1);
    if let Some(c) = condition {
        ids.push((class_offset + c) as u32);
    }
    ids.extend_from_slice(grid.tokens());
    TokenSequence { ids, has_condition: condition.is_some() }
}

pub fn unflatten(seq: &TokenSequence, h: usize, w: usize) -> Result<TokenGrid> {
    let expected = h * w + usize::from(seq.has_condition);
    if seq.len() != expected {
        return Err(Error::Shape(format!(
            "sequence of length {} cannot fill a {h}x{w} grid (expected {expected})",
            seq.len()
        )));
    }
    TokenGrid::new(h, w, seq.body().to_vec())
}

/// Token file: magic `DGTK`, u32 n, u32 h, u32 w, then `n·h·w` u32 ids.
pub fn encode_token_grids(grids: &[TokenGrid]) -> Result<Vec<u8>> {
    let (h, w) = grids.first().map_or((0, 0), |g| (g.h(), g.w()));
    if grids.iter().any(|g| (g.h(), g.w()) != (h, w)) {
        return Err(Error::Shape("all token grids in a file must share h, w".into()));
    }
    let mut wr = ByteWriter::new();
    wr.magic(TOKEN_MAGIC).u32(grids.len() as u32).u32(h as u32).u32(w as u32);
    wr.u32s(grids.iter().flat_map(|g| g.tokens().iter().copied()));
    Ok(wr.into_bytes())
}

pub fn decode_token_grids(bytes: &[u8]) -> Result<Vec<TokenGrid>> {
    let mut r = ByteReader::new(bytes);
    r.magic(TOKEN_MAGIC)?;
    let (n, h, w) = (r.u32()?, r.u32()?, r.u32()?);
    let count = checked_volume(&[n, h, w])?;
    let ids = r.u32s(count)?;
    r.finish()?;
    let per = (h as usize) * (w as usize);
    (0..n as usize)
        .map(|i| TokenGrid::new(h as usize, w as usize, ids[i * per..(i + 1) * per].to_vec()))
        .collect()
}

pub fn write_token_file(path: &Path, grids: &[TokenGrid]) -> Result<()> {
    fs::write(path, encode_token_grids(grids)?)?;
    Ok(())
}

pub fn load_token_file(path: &Path) -> Result<Vec<TokenGrid>> {
    decode_token_grids(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flatten_definition_and_offset() {
        let g = TokenGrid::new(2, 2, vec![7, 8, 9, 10]).unwrap();
        assert_eq!(flatten_raster(&g, None, 16).ids, vec![7, 8, 9, 10]);
        let s = flatten_raster(&g, Some(3), 16);
        assert_eq!(s.ids, vec![19, 7, 8, 9, 10]);
        assert_eq!(unflatten(&s, 2, 2).unwrap(), g);
    }

    #[test]
    fn wrong_length_rejected() {
        let s = TokenSequence { ids: vec![1, 2, 3], has_condition: false };
        assert!(unflatten(&s, 2, 2).is_err());
        let s = TokenSequence { ids: vec![1, 2, 3, 4], has_condition: true };
        assert!(unflatten(&s, 2, 2).is_err());
    }

    #[test]
    fn token_file_layout() {
        let g = TokenGrid::new(1, 2, vec![5, 6]).unwrap();
        let bytes = encode_token_grids(&[g.clone()]).unwrap();
        assert_eq!(bytes.len(), 16 + 8);
        assert_eq!(&bytes[..4], b"DGTK");
        assert_eq!(decode_token_grids(&bytes).unwrap(), vec![g]);
    }

    proptest! {
        #[test]
        fn raster_round_trip(tokens in proptest::collection::vec(0u32..64, 64), cond in proptest::option::of(0usize..8)) {
            let g = TokenGrid::new(8, 8, tokens).unwrap();
            let s = flatten_raster(&g, cond, 64);
            prop_assert_eq!(s.len(), 64 + usize::from(cond.is_some()));
            prop_assert_eq!(unflatten(&s, 8, 8).unwrap(), g.clone());
            for r in 0..8 {
                for c in 0..8 {
                    prop_assert_eq!(s.body()[r * 8 + c], g.get(r, c));
                }
            }
        }

        #[test]
        fn token_file_round_trip(n in 0usize..4, tokens in proptest::collection::vec(any::<u32>(), 48)) {
            let grids: Vec<TokenGrid> = (0..n).map(|i| TokenGrid::new(3, 4, tokens[i * 12..(i + 1) * 12].to_vec()).unwrap()).collect();
            let bytes = encode_token_grids(&grids).unwrap();
            prop_assert_eq!(decode_token_grids(&bytes).unwrap(), grids);
        }
    }
}
