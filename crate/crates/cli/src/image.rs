//! Slice image encodings.

use anyhow::{bail, Context};
use slicesplat::SliceImage;

/// Binary 8-bit PGM (`P5`), rows top to bottom.
pub fn encode_pgm(img: &SliceImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// Little-endian float32 pixels, row-major.
pub fn encode_f32(img: &SliceImage) -> Vec<u8> {
    img.pixels.iter().flat_map(|p| p.to_le_bytes()).collect()
}

pub fn decode_f32(bytes: &[u8]) -> anyhow::Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        bail!("float32 payload length {} is not a multiple of 4", bytes.len());
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Parses a `P5` image with maxval 255; returns `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> anyhow::Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            bail!("truncated PGM header");
        }
        fields.push(std::str::from_utf8(&bytes[start..pos])?.to_string());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        bail!("unsupported PGM variant {} / maxval {}", fields[0], fields[3]);
    }
    let w: usize = fields[1].parse().context("PGM width")?;
    let h: usize = fields[2].parse().context("PGM height")?;
    let data = &bytes[pos + 1..];
    if data.len() != w * h {
        bail!("PGM payload has {} bytes, expected {}", data.len(), w * h);
    }
    Ok((w, h, data.to_vec()))
}
