//! Binary file formats.
//!
//! Codebook files (`SGHC`), little-endian throughout:
//!
//! ```text
//! magic "SGHC" | u32 version = 1 | u32 K | u32 m | u32 d_sem | u32 d_pix
//! f32 momentum | u8 frozen
//! f32[K·d_sem] semantic vectors | f32[K] cluster sizes | f32[K·d_sem] ema sums
//! K × ( f32[m·d_pix] vectors | f32[m] cluster sizes | f32[m·d_pix] ema sums )
//! ```
//!
//! Feature grid files (`SGHF`): magic, u32 version = 1, u32 height, u32 width,
//! u32 dim, then `height·width·dim` f32 values in row-major order.
//!
//! Token ID streams (`SGID`): magic, u32 length, then `length` u32 IDs.

use std::fs;
use std::path::Path;

use crate::codebook::{CodeTable, HierarchicalCodebook, PixelSubCodebook, SemanticCodebook};
use crate::error::{Error, ParseError, Result};
use crate::grid::FeatureGrid;

pub const CODEBOOK_MAGIC: [u8; 4] = *b"SGHC";
pub const FEATURES_MAGIC: [u8; 4] = *b"SGHF";
pub const IDS_MAGIC: [u8; 4] = *b"SGID";
pub const FORMAT_VERSION: u32 = 1;

const CODEBOOK_HEADER_LEN: usize = 4 + 4 * 5 + 4 + 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ParseError> {
        if self.remaining() < n {
            return Err(ParseError::Truncated {
                needed: self.pos + n,
                available: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn bare_magic(&mut self, expected: [u8; 4]) -> Result<(), ParseError> {
        let found: [u8; 4] = self.take(4)?.try_into().unwrap();
        if found != expected {
            return Err(ParseError::BadMagic { expected, found });
        }
        Ok(())
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<(), ParseError> {
        self.bare_magic(expected)?;
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(ParseError::VersionMismatch {
                expected: FORMAT_VERSION,
                found: version,
            });
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32, ParseError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, ParseError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, ParseError> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_table(out: &mut Vec<u8>, table: &CodeTable) {
    put_f32s(out, table.vectors());
    put_f32s(out, table.ema_cluster_size());
    put_f32s(out, table.ema_sum());
}

fn inconsistent(msg: impl Into<String>) -> Error {
    ParseError::Inconsistent(msg.into()).into()
}

/// Byte image of the semantic section (vectors, sizes, sums) exactly as stored in a
/// codebook file. Used to verify that pixel training leaves it untouched.
pub fn semantic_section_bytes(semantic: &SemanticCodebook) -> Vec<u8> {
    let mut out = Vec::new();
    put_table(&mut out, semantic.table());
    out
}

pub fn encode_codebook(cb: &HierarchicalCodebook) -> Vec<u8> {
    let mut out = Vec::with_capacity(CODEBOOK_HEADER_LEN);
    out.extend_from_slice(&CODEBOOK_MAGIC);
    for v in [
        FORMAT_VERSION,
        cb.k() as u32,
        cb.m() as u32,
        cb.dim_sem() as u32,
        cb.dim_pix() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&cb.momentum().to_le_bytes());
    out.push(cb.semantic().is_frozen() as u8);
    put_table(&mut out, cb.semantic().table());
    for sub in cb.subs() {
        put_table(&mut out, sub.table());
    }
    out
}

fn read_table(reader: &mut Reader<'_>, len: usize, dim: usize) -> Result<CodeTable> {
    let vectors = reader.f32s(len * dim)?;
    let sizes = reader.f32s(len)?;
    let sums = reader.f32s(len * dim)?;
    CodeTable::from_parts(len, dim, vectors, sizes, sums).map_err(|e| inconsistent(e.to_string()))
}

pub fn decode_codebook(bytes: &[u8]) -> Result<HierarchicalCodebook> {
    let mut reader = Reader::new(bytes);
    reader.magic(CODEBOOK_MAGIC)?;
    let k = reader.u32()? as usize;
    let m = reader.u32()? as usize;
    let dim_sem = reader.u32()? as usize;
    let dim_pix = reader.u32()? as usize;
    let momentum = reader.f32()?;
    let frozen = match reader.take(1)?[0] {
        0 => false,
        1 => true,
        other => return Err(inconsistent(format!("frozen flag must be 0 or 1, found {other}"))),
    };
    if k == 0 || m == 0 || dim_sem == 0 || dim_pix == 0 {
        return Err(inconsistent(format!(
            "zero dimension in header: K={k} m={m} d_sem={dim_sem} d_pix={dim_pix}"
        )));
    }
    if !(momentum > 0.0 && momentum < 1.0) {
        return Err(inconsistent(format!("momentum {momentum} outside (0, 1)")));
    }

    let semantic_len = (k as u64) * (2 * dim_sem as u64 + 1) * 4;
    let block_len = (m as u64) * (2 * dim_pix as u64 + 1) * 4;
    let available = reader.remaining() as u64;
    if available < semantic_len {
        return Err(ParseError::Truncated {
            needed: (CODEBOOK_HEADER_LEN as u64 + semantic_len) as usize,
            available: bytes.len(),
        }
        .into());
    }
    let sub_bytes = available - semantic_len;
    let expected = block_len * k as u64;
    if sub_bytes != expected {
        if sub_bytes.is_multiple_of(block_len) {
            return Err(inconsistent(format!(
                "header declares {k} sub-codebooks but file contains {}",
                sub_bytes / block_len
            )));
        }
        if sub_bytes < expected {
            return Err(ParseError::Truncated {
                needed: (CODEBOOK_HEADER_LEN as u64 + semantic_len + expected) as usize,
                available: bytes.len(),
            }
            .into());
        }
        return Err(inconsistent(format!(
            "{} trailing bytes after the last sub-codebook",
            sub_bytes - expected
        )));
    }

    let table = read_table(&mut reader, k, dim_sem)?;
    let semantic = SemanticCodebook::new(table, momentum, frozen)?;
    let subs = (0..k)
        .map(|_| read_table(&mut reader, m, dim_pix).map(PixelSubCodebook::new))
        .collect::<Result<Vec<_>>>()?;
    HierarchicalCodebook::new(semantic, subs, momentum).map_err(|e| inconsistent(e.to_string()))
}

pub fn save_codebook(cb: &HierarchicalCodebook, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path.as_ref(), encode_codebook(cb)).map_err(|e| Error::io_at(&path, e))?;
    Ok(())
}

pub fn load_codebook(path: impl AsRef<Path>) -> Result<HierarchicalCodebook> {
    decode_codebook(&fs::read(path.as_ref()).map_err(|e| Error::io_at(&path, e))?)
}

pub fn encode_features(grid: &FeatureGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + grid.data().len() * 4);
    out.extend_from_slice(&FEATURES_MAGIC);
    for v in [
        FORMAT_VERSION,
        grid.height() as u32,
        grid.width() as u32,
        grid.dim() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    put_f32s(&mut out, grid.data());
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureGrid> {
    let mut reader = Reader::new(bytes);
    reader.magic(FEATURES_MAGIC)?;
    let height = reader.u32()? as usize;
    let width = reader.u32()? as usize;
    let dim = reader.u32()? as usize;
    if height == 0 || width == 0 || dim == 0 {
        return Err(inconsistent(format!(
            "zero dimension in header: {height}x{width}x{dim}"
        )));
    }
    let count = (height as u64) * (width as u64) * (dim as u64);
    let available = reader.remaining() as u64;
    if available < count * 4 {
        return Err(ParseError::Truncated {
            needed: (20 + count * 4) as usize,
            available: bytes.len(),
        }
        .into());
    }
    if available > count * 4 {
        return Err(inconsistent(format!("{} trailing bytes", available - count * 4)));
    }
    let data = reader.f32s(count as usize)?;
    FeatureGrid::new(height, width, dim, data).map_err(|e| inconsistent(e.to_string()))
}

pub fn save_features(grid: &FeatureGrid, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path.as_ref(), encode_features(grid)).map_err(|e| Error::io_at(&path, e))?;
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureGrid> {
    decode_features(&fs::read(path.as_ref()).map_err(|e| Error::io_at(&path, e))?)
}

pub fn encode_ids(ids: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + ids.len() * 4);
    out.extend_from_slice(&IDS_MAGIC);
    out.extend_from_slice(&(ids.len() as u32).to_le_bytes());
    for id in ids {
        out.extend_from_slice(&id.to_le_bytes());
    }
    out
}

pub fn decode_ids(bytes: &[u8]) -> Result<Vec<u32>> {
    let mut reader = Reader::new(bytes);
    reader.bare_magic(IDS_MAGIC)?;
    let len = reader.u32()? as usize;
    let ids = (0..len).map(|_| reader.u32()).collect::<Result<Vec<_>, _>>()?;
    if reader.remaining() > 0 {
        return Err(inconsistent(format!("{} trailing bytes", reader.remaining())));
    }
    Ok(ids)
}

pub fn save_ids(ids: &[u32], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path.as_ref(), encode_ids(ids)).map_err(|e| Error::io_at(&path, e))?;
    Ok(())
}

pub fn load_ids(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    decode_ids(&fs::read(path.as_ref()).map_err(|e| Error::io_at(&path, e))?)
}
