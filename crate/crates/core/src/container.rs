//! Flat binary container for named tensors (weights, running statistics,
//! exported planes).
//!
//! Layout: the 6-byte magic `IFSEG1`, then for each entry: name length
//! (u32 little-endian), UTF-8 name bytes, rank (u32), one u32 per dimension,
//! then the payload as raw little-endian 64-bit floats in row-major order.
//! Round-trips are bit-exact for `f64` tensors.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"IFSEG1";

/// Dimensions are u32 on the wire; anything larger than this rank is
/// corruption, not a real model.
const MAX_RANK: u32 = 16;

pub fn write_entries<S: Scalar, P: AsRef<Path>>(
    path: P,
    entries: &[(String, Tensor<S>)],
) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(64 + entries.iter().map(|(_, t)| 8 * t.numel()).sum::<usize>());
    buf.extend_from_slice(MAGIC);
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

struct Reader<'a> {
    path: &'a Path,
    buf: Vec<u8>,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CorruptFile {
                path: self.path.display().to_string(),
                reason: format!("truncated while reading {what}"),
            });
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_entries<S: Scalar, P: AsRef<Path>>(path: P) -> Result<Vec<(String, Tensor<S>)>> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let mut r = Reader { path, buf, pos: 0 };

    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::CorruptFile {
            path: path.display().to_string(),
            reason: "bad magic (not an IFSEG1 container)".to_string(),
        });
    }

    let mut entries = Vec::new();
    while r.pos < r.buf.len() {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::CorruptFile {
                path: path.display().to_string(),
                reason: "entry name is not valid UTF-8".to_string(),
            })?
            .to_string();
        let rank = r.u32("rank")?;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::CorruptFile {
                path: path.display().to_string(),
                reason: format!("entry '{name}' has implausible rank {rank}"),
            });
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut numel = 1usize;
        for _ in 0..rank {
            let d = r.u32("dimension")? as usize;
            numel = numel.checked_mul(d).ok_or_else(|| Error::CorruptFile {
                path: path.display().to_string(),
                reason: format!("entry '{name}' dimensions overflow"),
            })?;
            shape.push(d);
        }
        let raw = r.take(8 * numel, "payload")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| {
                S::cast(f64::from_le_bytes([
                    c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7],
                ]))
            })
            .collect();
        entries.push((name, Tensor::new(shape, data)?));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.ifseg");
        let mut rng = Rng::new(5);
        let entries: Vec<(String, Tensor<f64>)> = vec![
            ("enc/w".to_string(), Tensor::uniform(&[2, 3, 3, 3], -1.0, 1.0, &mut rng)),
            ("enc/b".to_string(), Tensor::uniform(&[2], -1.0, 1.0, &mut rng)),
            ("odd".to_string(), Tensor::new(vec![1], vec![f64::MIN_POSITIVE]).unwrap()),
        ];
        write_entries(&path, &entries).unwrap();
        let back: Vec<(String, Tensor<f64>)> = read_entries(&path).unwrap();
        assert_eq!(back.len(), entries.len());
        for ((n1, t1), (n2, t2)) in entries.iter().zip(&back) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            for (a, b) in t1.data().iter().zip(t2.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn empty_container_is_valid_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.ifseg");
        write_entries::<f64, _>(&path, &[]).unwrap();
        assert!(read_entries::<f64, _>(&path).unwrap().is_empty());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ifseg");
        std::fs::write(&path, b"NOTIFS whatever").unwrap();
        let err = read_entries::<f64, _>(&path).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn truncated_payload_is_rejected_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.ifseg");
        let entries = vec![("w".to_string(), Tensor::<f64>::zeros(&[4, 4]))];
        write_entries(&path, &entries).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let err = read_entries::<f64, _>(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = read_entries::<f64, _>("/nonexistent/nope.ifseg").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
