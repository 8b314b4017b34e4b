//! Bit-exact binary checkpoints: named tensors in a little-endian container
//! with a CRC32 trailer.
//!
//! Layout: magic `CSNL`, version u32, entry count u32, then per entry the
//! name (u32 length + UTF-8 bytes), `ndim` u32 (always 4 here), the dims as
//! u32, and the data as 32-bit little-endian reals; finally CRC32 of every
//! preceding byte. Entries are written in sorted name order, names are
//! unique, and the encoding does not depend on the host, so save followed by
//! load is the identity and equal tensor maps produce identical files.
//!
//! Values are stored at 32-bit precision regardless of the in-memory element
//! type; the training path runs at 32-bit, so resume round-trips exactly.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CSNL";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_NAME_LEN: u32 = 4096;

/// Serialize a named tensor map to bytes.
pub fn checkpoint_to_bytes<E: Element>(entries: &BTreeMap<String, Tensor<E>>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let count = u32::try_from(entries.len())
        .map_err(|_| Error::Checkpoint("too many entries".into()))?;
    buf.extend_from_slice(&count.to_le_bytes());
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        if name_bytes.is_empty() || name_bytes.len() > MAX_NAME_LEN as usize {
            return Err(Error::Checkpoint(format!(
                "entry name length {} out of range",
                name_bytes.len()
            )));
        }
        buf.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        let s = tensor.shape();
        buf.extend_from_slice(&4u32.to_le_bytes());
        for dim in [s.n, s.c, s.h, s.w] {
            let d = u32::try_from(dim)
                .map_err(|_| Error::Checkpoint(format!("dimension {dim} too large")))?;
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&buf);
    buf.extend_from_slice(&hasher.finalize().to_le_bytes());
    Ok(buf)
}

/// Parse bytes produced by [`checkpoint_to_bytes`]. The CRC is verified
/// before any field is interpreted, so a flipped byte anywhere is reported
/// as corruption rather than as a bogus structural error.
pub fn checkpoint_from_bytes<E: Element>(bytes: &[u8]) -> Result<BTreeMap<String, Tensor<E>>> {
    if bytes.len() < 16 {
        return Err(Error::Checkpoint(format!(
            "file too short to be a checkpoint ({} bytes)",
            bytes.len()
        )));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(body);
    let computed = hasher.finalize();
    if stored != computed {
        return Err(Error::Checkpoint(format!(
            "CRC mismatch: stored {stored:#010x}, computed {computed:#010x}"
        )));
    }

    let mut r = Reader { bytes: body, pos: 0 };
    let magic = r.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let count = r.u32()?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32()?;
        if name_len == 0 || name_len > MAX_NAME_LEN {
            return Err(Error::Checkpoint(format!(
                "entry name length {name_len} out of range"
            )));
        }
        let name = std::str::from_utf8(r.take(name_len as usize)?)
            .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32()?;
        if ndim != 4 {
            return Err(Error::Checkpoint(format!(
                "entry {name} has {ndim} dims, expected 4"
            )));
        }
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            *d = r.u32()? as usize;
        }
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        let mut data = Vec::with_capacity(shape.count());
        for _ in 0..shape.count() {
            let raw = r.take(4)?;
            let v = f32::from_le_bytes(raw.try_into().unwrap());
            data.push(E::from_f64(v as f64));
        }
        let tensor = Tensor::from_vec(shape, data)
            .map_err(|e| Error::Checkpoint(format!("entry {name}: {e}")))?;
        if out.insert(name.clone(), tensor).is_some() {
            return Err(Error::Checkpoint(format!("duplicate entry name {name}")));
        }
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last entry",
            body.len() - r.pos
        )));
    }
    Ok(out)
}

pub fn save_checkpoint<E: Element>(
    path: impl AsRef<Path>,
    entries: &BTreeMap<String, Tensor<E>>,
) -> Result<()> {
    let bytes = checkpoint_to_bytes(entries)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint<E: Element>(path: impl AsRef<Path>) -> Result<BTreeMap<String, Tensor<E>>> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| {
        Error::Checkpoint(format!("cannot read {}: {e}", path.as_ref().display()))
    })?;
    checkpoint_from_bytes(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated checkpoint: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn sample_map() -> BTreeMap<String, Tensor<f32>> {
        let mut st = Stream::new(11, 3);
        let mut map = BTreeMap::new();
        map.insert(
            "a.weight".to_string(),
            Tensor::from_fn(Shape::new(2, 3, 4, 5), |_, _, _, _| st.uniform() as f32).unwrap(),
        );
        map.insert(
            "meta.step".to_string(),
            Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![42.0f32]).unwrap(),
        );
        map
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let map = sample_map();
        let bytes = checkpoint_to_bytes(&map).unwrap();
        let back: BTreeMap<String, Tensor<f32>> = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(back.len(), map.len());
        for (name, t) in &map {
            let b = &back[name];
            assert_eq!(b.shape(), t.shape());
            assert_eq!(b.data(), t.data());
        }
        // Re-serializing the loaded map reproduces the file byte for byte.
        assert_eq!(checkpoint_to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let map = sample_map();
        save_checkpoint(&path, &map).unwrap();
        let back: BTreeMap<String, Tensor<f32>> = load_checkpoint(&path).unwrap();
        assert_eq!(back["meta.step"].data(), &[42.0]);
        assert!(load_checkpoint::<f32>(dir.path().join("absent.ckpt")).is_err());
    }

    #[test]
    fn empty_checkpoint_loads_to_empty_map() {
        let map: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
        let bytes = checkpoint_to_bytes(&map).unwrap();
        assert_eq!(bytes.len(), 4 + 4 + 4 + 4);
        let back: BTreeMap<String, Tensor<f32>> = checkpoint_from_bytes(&bytes).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn every_flipped_byte_is_detected() {
        let bytes = checkpoint_to_bytes(&sample_map()).unwrap();
        for pos in [0, 5, 9, 17, bytes.len() / 2, bytes.len() - 5, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x40;
            let err = checkpoint_from_bytes::<f32>(&bad).unwrap_err();
            assert!(
                matches!(&err, Error::Checkpoint(m) if m.contains("CRC")),
                "flip at {pos}: {err}"
            );
        }
    }

    /// Bad magic and bad version are distinct errors, reported only when the
    /// CRC itself is consistent (a deliberately re-signed file).
    #[test]
    fn magic_and_version_errors_are_distinct() {
        let reseal = |mut body: Vec<u8>| {
            body.truncate(body.len() - 4);
            let mut h = crc32fast::Hasher::new();
            h.update(&body);
            let crc = h.finalize();
            body.extend_from_slice(&crc.to_le_bytes());
            body
        };
        let good = checkpoint_to_bytes(&sample_map()).unwrap();

        let mut wrong_magic = good.clone();
        wrong_magic[0] = b'X';
        let err = checkpoint_from_bytes::<f32>(&reseal(wrong_magic)).unwrap_err();
        assert!(matches!(&err, Error::Checkpoint(m) if m.contains("magic")), "{err}");

        let mut wrong_version = good.clone();
        wrong_version[4..8].copy_from_slice(&99u32.to_le_bytes());
        let err = checkpoint_from_bytes::<f32>(&reseal(wrong_version)).unwrap_err();
        assert!(matches!(&err, Error::Checkpoint(m) if m.contains("version")), "{err}");

        let err = checkpoint_from_bytes::<f32>(&good[..10]).unwrap_err();
        assert!(matches!(&err, Error::Checkpoint(m) if m.contains("short")), "{err}");
    }

    #[test]
    fn truncated_entry_with_valid_crc_reports_truncation() {
        let bytes = checkpoint_to_bytes(&sample_map()).unwrap();
        let mut cut = bytes[..bytes.len() - 24].to_vec();
        let mut h = crc32fast::Hasher::new();
        h.update(&cut);
        let crc = h.finalize();
        cut.extend_from_slice(&crc.to_le_bytes());
        let err = checkpoint_from_bytes::<f32>(&cut).unwrap_err();
        assert!(matches!(&err, Error::Checkpoint(m) if m.contains("truncated")), "{err}");
    }

    #[test]
    fn f64_values_round_trip_through_f32_storage() {
        let mut map = BTreeMap::new();
        map.insert(
            "w".to_string(),
            Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.25f64, 1.0 / 3.0]).unwrap(),
        );
        let bytes = checkpoint_to_bytes(&map).unwrap();
        let back: BTreeMap<String, Tensor<f64>> = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(back["w"].data()[0], 0.25);
        assert_eq!(back["w"].data()[1], (1.0f64 / 3.0) as f32 as f64);
    }
}
