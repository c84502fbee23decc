//! Binary PGM (P5) reading and writing.
//!
//! 8-bit rasters use one byte per sample. 16-bit rasters (maxval > 255) store
//! each sample as a little-endian `u16`, which differs from the netpbm default
//! byte order; files written here are only guaranteed to round-trip through
//! this module.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub maxval: u16,
    pub pixels: Grid<u16>,
}

pub fn encode(pixels: &Grid<u16>, maxval: u16) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", pixels.width(), pixels.height(), maxval).into_bytes();
    if maxval <= 255 {
        out.extend(pixels.as_slice().iter().map(|&v| v.min(255) as u8));
    } else {
        for &v in pixels.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write(path: &Path, pixels: &Grid<u16>, maxval: u16) -> Result<()> {
    fs::write(path, encode(pixels, maxval)).map_err(|e| Error::io(path, e))
}

pub fn write_u8(path: &Path, pixels: &Grid<u8>) -> Result<()> {
    write(path, &pixels.map(|&v| v as u16), 255)
}

pub fn read(path: &Path) -> Result<Pgm> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|reason| Error::malformed(path, reason))
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Pgm, String> {
    let mut pos = 0usize;
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err("missing P5 magic".into());
    }
    pos += 2;
    let width = header_number(bytes, &mut pos)?;
    let height = header_number(bytes, &mut pos)?;
    let maxval = header_number(bytes, &mut pos)?;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("invalid maxval {maxval}"));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err("missing whitespace after header".into()),
    }
    let n = width.checked_mul(height).ok_or("dimensions overflow")?;
    let sample_bytes = if maxval > 255 { 2 } else { 1 };
    let body = &bytes[pos..];
    if body.len() != n * sample_bytes {
        return Err(format!("expected {} raster bytes, found {}", n * sample_bytes, body.len()));
    }
    let data: Vec<u16> = if sample_bytes == 1 {
        body.iter().map(|&b| b as u16).collect()
    } else {
        body.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()
    };
    if let Some(v) = data.iter().find(|&&v| v as usize > maxval) {
        return Err(format!("sample {v} exceeds maxval {maxval}"));
    }
    Ok(Pgm { maxval: maxval as u16, pixels: Grid::from_vec(width, height, data) })
}

fn header_number(bytes: &[u8], pos: &mut usize) -> std::result::Result<usize, String> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err("truncated header".into()),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| b.is_ascii_digit()) {
        *pos += 1;
    }
    if start == *pos {
        return Err("expected a decimal number in header".into());
    }
    std::str::from_utf8(&bytes[start..*pos]).unwrap().parse().map_err(|e| format!("bad header number: {e}"))
}
