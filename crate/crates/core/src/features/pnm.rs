//! Minimal Netpbm reader/writer: PGM (P2/P5) and PPM (P3/P6) with maxval 255.

use std::fs;
use std::path::Path;

use super::GrayImage;
use crate::error::{Error, ParseError, Result};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    AsciiGray,
    AsciiRgb,
    BinaryGray,
    BinaryRgb,
}

struct Header {
    kind: Kind,
    width: usize,
    height: usize,
}

fn truncated(needed: usize, available: usize) -> Error {
    ParseError::Truncated { needed, available }.into()
}

/// Reads whitespace-separated header tokens, skipping `#` comments.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(truncated(start + 1, bytes.len()));
    }
    Ok(&bytes[start..*pos])
}

fn next_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let tok = next_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("expected a number, found {:?}", String::from_utf8_lossy(tok))))
}

fn parse_header(bytes: &[u8], pos: &mut usize) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(truncated(2, bytes.len()));
    }
    let kind = match &bytes[..2] {
        b"P2" => Kind::AsciiGray,
        b"P3" => Kind::AsciiRgb,
        b"P5" => Kind::BinaryGray,
        b"P6" => Kind::BinaryRgb,
        other => {
            return Err(Error::Format(format!(
                "unsupported magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    *pos = 2;
    let width = next_number(bytes, pos)?;
    let height = next_number(bytes, pos)?;
    let maxval = next_number(bytes, pos)?;
    if maxval != 255 {
        return Err(Error::Format(format!(
            "unsupported maxval {maxval}, only 255 is accepted"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("empty image {width}x{height}")));
    }
    Ok(Header { kind, width, height })
}

fn luma(r: u8, g: u8, b: u8) -> f32 {
    ((0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0) as f32
}

/// Decodes a PGM/PPM byte buffer into a luma image in `[0, 1]`.
pub fn decode_pnm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0;
    let header = parse_header(bytes, &mut pos)?;
    let pixels = header.width * header.height;
    let channels = match header.kind {
        Kind::AsciiGray | Kind::BinaryGray => 1,
        Kind::AsciiRgb | Kind::BinaryRgb => 3,
    };
    let samples: Vec<u8> = match header.kind {
        Kind::BinaryGray | Kind::BinaryRgb => {
            // Exactly one whitespace byte separates the header from the raster.
            let start = pos + 1;
            let needed = start + pixels * channels;
            if bytes.len() < needed {
                return Err(truncated(needed, bytes.len()));
            }
            bytes[start..needed].to_vec()
        }
        Kind::AsciiGray | Kind::AsciiRgb => (0..pixels * channels)
            .map(|_| {
                let v = next_number(bytes, &mut pos)?;
                u8::try_from(v).map_err(|_| Error::Format(format!("sample {v} exceeds maxval 255")))
            })
            .collect::<Result<_>>()?,
    };
    let data = if channels == 1 {
        samples.iter().map(|&v| v as f32 / 255.0).collect()
    } else {
        samples.chunks_exact(3).map(|p| luma(p[0], p[1], p[2])).collect()
    };
    GrayImage::new(header.height, header.width, data)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    decode_pnm(&fs::read(path.as_ref()).map_err(|e| Error::io_at(&path, e))?)
}

/// Binary PGM (P5) encoding, rounding to the nearest 8-bit level.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path.as_ref(), encode_pgm(img)).map_err(|e| Error::io_at(&path, e))?;
    Ok(())
}
