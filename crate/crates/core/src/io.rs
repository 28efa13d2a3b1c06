//! Binary file formats: the FMAP feature-map container and binary PGM images.
//!
//! FMAP layout: magic `"FMAP1\0"` (6 bytes), three unsigned 32-bit
//! little-endian integers `C, H, W`, then `C*H*W` little-endian IEEE-754
//! `f32` values, channel-major then row-major. Encode/decode is a bit-exact
//! bijection on the representable set.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fmap::{FeatureMap, Image};

const FMAP_MAGIC: &[u8; 6] = b"FMAP1\0";

/// Serializes a feature map to the FMAP byte format.
pub fn encode_fmap(fmap: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 12 + fmap.data().len() * 4);
    out.extend_from_slice(FMAP_MAGIC);
    out.extend_from_slice(&(fmap.channels() as u32).to_le_bytes());
    out.extend_from_slice(&(fmap.height() as u32).to_le_bytes());
    out.extend_from_slice(&(fmap.width() as u32).to_le_bytes());
    for v in fmap.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses the FMAP byte format back into a feature map.
pub fn decode_fmap(bytes: &[u8]) -> Result<FeatureMap> {
    if bytes.len() < 18 {
        return Err(Error::format("fmap: truncated header"));
    }
    if &bytes[..6] != FMAP_MAGIC {
        return Err(Error::format("fmap: bad magic"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap());
    let (c, h, w) = (dim(0) as u64, dim(1) as u64, dim(2) as u64);
    let n = c
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .filter(|&n| n <= (usize::MAX / 4) as u64)
        .ok_or_else(|| Error::format("fmap: dimension overflow"))? as usize;
    let payload = &bytes[18..];
    if payload.len() != n * 4 {
        return Err(Error::format(format!(
            "fmap: payload is {} bytes, header implies {}",
            payload.len(),
            n * 4
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    FeatureMap::new(c as usize, h as usize, w as usize, data)
        .map_err(|e| Error::format(format!("fmap: {e}")))
}

pub fn write_fmap(path: impl AsRef<Path>, fmap: &FeatureMap) -> Result<()> {
    fs::write(path, encode_fmap(fmap))?;
    Ok(())
}

pub fn read_fmap(path: impl AsRef<Path>) -> Result<FeatureMap> {
    decode_fmap(&fs::read(path)?)
}

/// Serializes an image as binary PGM (P5), maxval 255.
pub fn encode_pgm(image: &Image) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", image.width(), image.height());
    let mut out = Vec::with_capacity(header.len() + image.data().len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(image.data());
    out
}

/// Parses a binary PGM (P5) with maxval 255. Comment lines in the header are
/// accepted.
pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and '#' comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("pgm: truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(bytes)? != "P5" {
        return Err(Error::format("pgm: not a binary PGM (P5)"));
    }
    let parse = |s: String| -> Result<usize> {
        s.parse::<usize>().map_err(|_| Error::format(format!("pgm: bad header token {s:?}")))
    };
    let width = parse(token(bytes)?)?;
    let height = parse(token(bytes)?)?;
    let maxval = parse(token(bytes)?)?;
    if maxval != 255 {
        return Err(Error::format(format!("pgm: unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates header and payload
    pos += 1;
    let n = height
        .checked_mul(width)
        .ok_or_else(|| Error::format("pgm: dimension overflow"))?;
    if bytes.len() < pos || bytes.len() - pos != n {
        return Err(Error::format(format!(
            "pgm: payload is {} bytes, header implies {}",
            bytes.len().saturating_sub(pos),
            n
        )));
    }
    Image::new(height, width, bytes[pos..].to_vec())
        .map_err(|e| Error::format(format!("pgm: {e}")))
}

pub fn write_pgm(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    fs::write(path, encode_pgm(image))?;
    Ok(())
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
    decode_pgm(&fs::read(path)?)
}
