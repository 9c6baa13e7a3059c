//! Volume readers: headerless big-endian 16-bit raws (dims supplied by the
//! caller) and the ANALYZE-7.5 header/image pair subset those same scans
//! ship in.
//!
//! Loaders never truncate silently — the payload byte count must match the
//! declared dimensions exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A single loaded scalar field; pair one intensity and one label field
/// into a [`super::Volume`] with [`assemble_volume`].
#[derive(Debug, Clone)]
pub struct RawField {
    pub dims: (usize, usize, usize),
    pub values: Vec<u16>,
}

/// Reads a headerless big-endian unsigned 16-bit raw of the given dims
/// (depth, height, width).
pub fn load_raw16<P: AsRef<Path>>(path: P, dims: (usize, usize, usize)) -> Result<RawField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let numel = dims.0 * dims.1 * dims.2;
    if bytes.len() != 2 * numel {
        return Err(Error::CorruptFile {
            path: path.display().to_string(),
            reason: format!(
                "expected {} bytes for dims {:?}, found {}",
                2 * numel,
                dims,
                bytes.len()
            ),
        });
    }
    let values = bytes
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok(RawField { dims, values })
}

const ANALYZE_HEADER_LEN: usize = 348;
/// 348 decoded with swapped bytes.
const ANALYZE_HEADER_LEN_SWAPPED: i32 = 1_543_569_408;
const DATATYPE_SIGNED_SHORT: i16 = 4;

/// Reads an ANALYZE-7.5 pair given the `.hdr` path; the `.img` payload sits
/// next to it. Only datatype 4 (signed 16-bit) is supported — that is what
/// the scans use — and byte order is detected from the header-size field:
/// little-endian readers see 348 natively or 1,543,569,408 when the file is
/// big-endian.
pub fn load_analyze<P: AsRef<Path>>(hdr_path: P) -> Result<RawField> {
    let hdr_path = hdr_path.as_ref();
    let hdr = fs::read(hdr_path).map_err(|e| Error::io(hdr_path, e))?;
    let corrupt = |reason: String| Error::CorruptFile {
        path: hdr_path.display().to_string(),
        reason,
    };
    if hdr.len() < ANALYZE_HEADER_LEN {
        return Err(corrupt(format!("header is {} bytes, need {ANALYZE_HEADER_LEN}", hdr.len())));
    }

    let i32_at = |off: usize, swap: bool| -> i32 {
        let b = [hdr[off], hdr[off + 1], hdr[off + 2], hdr[off + 3]];
        if swap {
            i32::from_be_bytes(b)
        } else {
            i32::from_le_bytes(b)
        }
    };
    let i16_at = |off: usize, swap: bool| -> i16 {
        let b = [hdr[off], hdr[off + 1]];
        if swap {
            i16::from_be_bytes(b)
        } else {
            i16::from_le_bytes(b)
        }
    };

    let sizeof_hdr = i32_at(0, false);
    let swap = match sizeof_hdr {
        x if x == ANALYZE_HEADER_LEN as i32 => false,
        ANALYZE_HEADER_LEN_SWAPPED => true,
        other => {
            return Err(corrupt(format!(
                "header-size field {other}; not an ANALYZE-7.5 header"
            )))
        }
    };

    // dim[0] = number of used dimensions, dim[1..4] = X, Y, Z extents.
    let dim_off = 40;
    let ndim = i16_at(dim_off, swap);
    if !(3..=4).contains(&ndim) {
        return Err(corrupt(format!("unsupported dimension count {ndim}")));
    }
    let x = i16_at(dim_off + 2, swap);
    let y = i16_at(dim_off + 4, swap);
    let z = i16_at(dim_off + 6, swap);
    if x <= 0 || y <= 0 || z <= 0 {
        return Err(corrupt(format!("non-positive extents ({x}, {y}, {z})")));
    }

    let datatype = i16_at(70, swap);
    if datatype != DATATYPE_SIGNED_SHORT {
        return Err(Error::UnsupportedDatatype(datatype));
    }

    let img_path = hdr_path.with_extension("img");
    let img = fs::read(&img_path).map_err(|e| Error::io(&img_path, e))?;
    // Stored X-fastest; read as (depth=Z, height=Y, width=X).
    let dims = (z as usize, y as usize, x as usize);
    let numel = dims.0 * dims.1 * dims.2;
    if img.len() != 2 * numel {
        return Err(Error::CorruptFile {
            path: img_path.display().to_string(),
            reason: format!(
                "expected {} bytes for dims {:?}, found {}",
                2 * numel,
                dims,
                img.len()
            ),
        });
    }
    let values = img
        .chunks_exact(2)
        .map(|c| {
            let v = if swap {
                i16::from_be_bytes([c[0], c[1]])
            } else {
                i16::from_le_bytes([c[0], c[1]])
            };
            // Tissue intensities are non-negative; clamp stray negatives.
            v.max(0) as u16
        })
        .collect();
    Ok(RawField { dims, values })
}

/// Builds a labeled volume from an intensity field and a label field
/// remapped through `mapping`.
pub fn assemble_volume(
    intensity: &RawField,
    labels: &RawField,
    mapping: &super::LabelMapping,
    subject_id: impl Into<String>,
) -> Result<super::Volume> {
    if intensity.dims != labels.dims {
        return Err(Error::shape(
            "volume fields",
            &[intensity.dims.0, intensity.dims.1, intensity.dims.2],
            &[labels.dims.0, labels.dims.1, labels.dims.2],
        ));
    }
    let remapped = mapping.apply(&labels.values)?;
    let intensities = intensity.values.iter().map(|&v| v as f64).collect();
    super::Volume::new(intensity.dims, intensities, remapped, subject_id)
}
