//! Binary (P5) PGM output for visual inspection of slices, masks, and
//! encoded planes. Read support exists only to round-trip in tests.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Writes `pixels` (row-major, `width * height` bytes) as a binary PGM.
pub fn write_pgm<P: AsRef<Path>>(path: P, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if pixels.len() != width * height {
        return Err(Error::invalid(format!(
            "pgm payload has {} bytes for {width}x{height}",
            pixels.len()
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::invalid("pgm dimensions must be nonzero"));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(format!("P5\n{width} {height}\n255\n").as_bytes())
        .and_then(|_| file.write_all(pixels))
        .map_err(|e| Error::io(path, e))
}

/// Maps a `[0, 1]` plane to 8-bit gray: `round(v * 255)`, clamped.
pub fn unit_plane_to_bytes<S: Scalar>(plane: &Tensor<S>) -> Vec<u8> {
    plane
        .data()
        .iter()
        .map(|v| (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Reads back a binary PGM written by [`write_pgm`] (no comment support).
pub fn read_pgm<P: AsRef<Path>>(path: P) -> Result<(usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: &str| Error::CorruptFile {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let header_end = bytes
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == b'\n')
        .nth(2)
        .ok_or_else(|| corrupt("missing header"))?
        .0;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| corrupt("bad header"))?;
    let mut parts = header.split_ascii_whitespace();
    if parts.next() != Some("P5") {
        return Err(corrupt("not a P5 file"));
    }
    let width: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| corrupt("bad width"))?;
    let height: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| corrupt("bad height"))?;
    if parts.next() != Some("255") {
        return Err(corrupt("unsupported max value"));
    }
    let pixels = bytes[header_end + 1..].to_vec();
    if pixels.len() != width * height {
        return Err(corrupt("payload size mismatch"));
    }
    Ok((width, height, pixels))
}
