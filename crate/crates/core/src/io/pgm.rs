//! Binary 16-bit PGM (`P5`, maxval 65535, big-endian samples).

use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::ThermalImage;

const MAXVAL: u32 = 65535;

pub fn encode_pgm16(img: &ThermalImage) -> Result<Vec<u8>> {
    if img.pixels.len() != img.width * img.height || img.width == 0 || img.height == 0 {
        return Err(Error::invalid("image dimensions do not match its pixel buffer"));
    }
    let mut out = format!("P5\n{} {}\n{MAXVAL}\n", img.width, img.height).into_bytes();
    out.reserve(img.pixels.len() * 2);
    for (k, &p) in img.pixels.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!(
                "pixel {k} value {p} outside [0, 1] cannot be stored"
            )));
        }
        let q = (f64::from(p) * f64::from(MAXVAL)).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}

pub fn write_pgm16(path: &Path, img: &ThermalImage) -> Result<()> {
    let bytes = encode_pgm16(img)?;
    super::write_atomic(path, |w| w.write_all(&bytes))
}

pub fn read_pgm16(path: &Path) -> Result<ThermalImage> {
    decode_pgm16(&super::read_file(path)?, path)
}

/// Parses PGM bytes; `path` only labels errors.
pub fn decode_pgm16(bytes: &[u8], path: &Path) -> Result<ThermalImage> {
    let mut cur = Cursor { bytes, pos: 0, path };
    if bytes.get(..2) != Some(b"P5") {
        return Err(cur.error(0, "expected magic number P5"));
    }
    cur.pos = 2;
    let (width, _) = cur.header_number("width")?;
    let (height, _) = cur.header_number("height")?;
    let (maxval, maxval_at) = cur.header_number("maxval")?;
    if maxval != MAXVAL as usize {
        return Err(cur.error(maxval_at, &format!("maxval {maxval} unsupported, need {MAXVAL}")));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(cur.error(cur.pos, "expected whitespace after maxval")),
    }
    if width == 0 || height == 0 {
        return Err(cur.error(cur.pos, "image dimensions must be positive"));
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(2))
        .ok_or_else(|| cur.error(cur.pos, "image dimensions overflow"))?;
    let raster = &bytes[cur.pos..];
    if raster.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: raster.len(),
        });
    }
    if raster.len() > expected {
        return Err(cur.error(cur.pos + expected, "trailing bytes after pixel data"));
    }
    let pixels = raster
        .chunks_exact(2)
        .map(|b| (f64::from(u16::from_be_bytes([b[0], b[1]])) / f64::from(MAXVAL)) as f32)
        .collect();
    ThermalImage::new(width, height, pixels)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn error(&self, offset: usize, msg: &str) -> Error {
        Error::parse(self.path, format!("byte {offset}"), msg)
    }

    /// Skips whitespace and `#` comments, then reads a decimal number.
    /// Returns it with its byte offset.
    fn header_number(&mut self, what: &str) -> Result<(usize, usize)> {
        let start = self.pos;
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while !matches!(self.bytes.get(self.pos), None | Some(b'\n' | b'\r')) {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
        if self.pos == start {
            return Err(self.error(self.pos, &format!("expected whitespace before {what}")));
        }
        let digits_at = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if self.pos == digits_at {
            return Err(self.error(digits_at, &format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[digits_at..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .map(|v| (v, digits_at))
            .ok_or_else(|| self.error(digits_at, &format!("{what} out of range")))
    }
}
