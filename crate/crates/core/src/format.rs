//! Little-endian binary helpers shared by every on-disk format.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn magic(&mut self, m: &[u8; 4]) -> &mut Self {
        self.buf.extend_from_slice(m);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f32s(&mut self, vs: impl IntoIterator<Item = f32>) -> &mut Self {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self
    }

    pub fn u32s(&mut self, vs: impl IntoIterator<Item = u32>) -> &mut Self {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self
    }

    /// u32 byte length followed by UTF-8 bytes.
    pub fn text(&mut self, s: &str) -> &mut Self {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
        self
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn write_to(self, path: &Path) -> Result<()> {
        fs::write(path, self.buf)?;
        Ok(())
    }
}

pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn total_len(&self) -> usize {
        self.buf.len()
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                expected: (self.pos + n) as u64,
                actual: self.buf.len() as u64,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4)?.try_into().expect("4 bytes");
        if &found != expected {
            return Err(Error::BadMagic { expected: *expected, found });
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// Checks that `count` 4-byte elements are present before reading them.
    pub fn require_words(&self, count: usize) -> Result<()> {
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| Error::Overflow(format!("{count} elements of 4 bytes")))?;
        if self.remaining() < bytes {
            return Err(Error::Truncated {
                expected: (self.pos as u64) + bytes as u64,
                actual: self.buf.len() as u64,
            });
        }
        Ok(())
    }

    pub fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        self.require_words(count)?;
        let bytes = self.take(count * 4)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    pub fn u32s(&mut self, count: usize) -> Result<Vec<u32>> {
        self.require_words(count)?;
        let bytes = self.take(count * 4)?;
        Ok(bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    pub fn text(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|e| Error::Malformed(format!("metadata is not UTF-8: {e}")))
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Malformed(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

/// Product of dimensions, rejecting anything that overflows `usize`.
pub fn checked_volume(dims: &[u32]) -> Result<usize> {
    dims.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d as usize)
            .ok_or_else(|| Error::Overflow(format!("dimensions {dims:?}")))
    })
}
