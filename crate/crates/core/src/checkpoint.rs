//! Binary parameter archives.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "FGIM"
//! version  u32      currently 1
//! count    u64      number of entries
//! entry*   count times, in parameter insertion order:
//!   name_len u64
//!   name     name_len bytes of UTF-8
//!   rank     u64     always 2
//!   rows     u64
//!   cols     u64
//!   values   rows * cols f32, row-major
//! ```
//!
//! Values are stored as f32 regardless of the model's working precision,
//! so an f32 store round-trips bit for bit while an f64 store loads back
//! rounded to f32 resolution. Readers reject wrong magic, unknown
//! versions, non-matrix ranks, duplicate names, truncated files, and
//! trailing bytes.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::numerics::{NumericsError, ParamStore, Real, Tensor};

const MAGIC: [u8; 4] = *b"FGIM";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("file ends inside {what}")]
    Truncated { what: &'static str },
    #[error("bad magic {got:?}, expected {MAGIC:?}")]
    BadMagic { got: [u8; 4] },
    #[error("unsupported archive version {got}")]
    UnsupportedVersion { got: u32 },
    #[error("parameter name is not valid UTF-8")]
    BadName(#[from] std::string::FromUtf8Error),
    #[error("parameter {name:?} has rank {got}, only matrices are supported")]
    BadRank { name: String, got: u64 },
    #[error("duplicate parameter name {0:?}")]
    DuplicateName(String),
    #[error("corrupt archive: {0}")]
    Corrupt(&'static str),
    #[error("archive has bytes after the last entry")]
    TrailingBytes,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub fn write_checkpoint<T: Real, W: Write>(
    store: &ParamStore<T>,
    mut w: W,
) -> Result<(), CheckpointError> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for (name, tensor) in store.iter() {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&2u64.to_le_bytes())?;
        w.write_all(&(tensor.rows() as u64).to_le_bytes())?;
        w.write_all(&(tensor.cols() as u64).to_le_bytes())?;
        for &v in tensor.data() {
            w.write_all(&(v.to_f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<T: Real, R: Read>(mut r: R) -> Result<ParamStore<T>, CheckpointError> {
    let mut magic = [0u8; 4];
    read_or_truncated(&mut r, &mut magic, "header magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic { got: magic });
    }
    let version = read_u32(&mut r, "header version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion { got: version });
    }
    let count = read_u64(&mut r, "entry count")?;

    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = to_len(read_u64(&mut r, "name length")?)?;
        let mut name_bytes = vec![0u8; name_len];
        read_or_truncated(&mut r, &mut name_bytes, "parameter name")?;
        let name = String::from_utf8(name_bytes)?;
        let rank = read_u64(&mut r, "tensor rank")?;
        if rank != 2 {
            return Err(CheckpointError::BadRank { name, got: rank });
        }
        let rows = to_len(read_u64(&mut r, "row count")?)?;
        let cols = to_len(read_u64(&mut r, "column count")?)?;
        let n = rows
            .checked_mul(cols)
            .ok_or(CheckpointError::Corrupt("tensor element count overflows"))?;
        // Chunked reads keep a corrupt size field from allocating the
        // claimed space before the end of file is noticed.
        let mut data = Vec::new();
        let mut buf = [0u8; 4 * 1024];
        let mut remaining = n;
        while remaining > 0 {
            let take = remaining.min(1024);
            read_or_truncated(&mut r, &mut buf[..4 * take], "tensor values")?;
            for chunk in buf[..4 * take].chunks_exact(4) {
                let bits = [chunk[0], chunk[1], chunk[2], chunk[3]];
                data.push(T::from_f64(f32::from_le_bytes(bits) as f64));
            }
            remaining -= take;
        }
        if store.contains(&name) {
            return Err(CheckpointError::DuplicateName(name));
        }
        store.insert(&name, Tensor::new(rows, cols, data)?);
    }

    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(store),
        _ => Err(CheckpointError::TrailingBytes),
    }
}

pub fn save_checkpoint<T: Real>(
    store: &ParamStore<T>,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(store, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<ParamStore<T>, CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

fn read_or_truncated<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    what: &'static str,
) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            CheckpointError::Truncated { what }
        } else {
            CheckpointError::Io(e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    read_or_truncated(r, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R, what: &'static str) -> Result<u64, CheckpointError> {
    let mut buf = [0u8; 8];
    read_or_truncated(r, &mut buf, what)?;
    Ok(u64::from_le_bytes(buf))
}

fn to_len(v: u64) -> Result<usize, CheckpointError> {
    usize::try_from(v).map_err(|_| CheckpointError::Corrupt("length does not fit in memory"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> ParamStore<f32> {
        let mut store = ParamStore::new();
        store.insert(
            "layer.w",
            Tensor::new(2, 3, vec![0.1, -2.5, 3.75, f32::MIN_POSITIVE, -0.0, 1e30]).unwrap(),
        );
        store.insert("layer.b", Tensor::new(1, 3, vec![0.0, -1.0, 0.5]).unwrap());
        store.insert("scale", Tensor::new(1, 1, vec![std::f32::consts::PI]).unwrap());
        store
    }

    fn to_bytes(store: &ParamStore<f32>) -> Vec<u8> {
        let mut buf = Vec::new();
        write_checkpoint(store, &mut buf).unwrap();
        buf
    }

    #[test]
    fn f32_round_trip_is_bit_exact_and_order_preserving() {
        let store = sample_store();
        let loaded: ParamStore<f32> = read_checkpoint(&to_bytes(&store)[..]).unwrap();
        assert_eq!(loaded.len(), store.len());
        for ((n0, t0), (n1, t1)) in store.iter().zip(loaded.iter()) {
            assert_eq!(n0, n1);
            assert_eq!((t0.rows(), t0.cols()), (t1.rows(), t1.cols()));
            for (a, b) in t0.data().iter().zip(t1.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn empty_store_round_trips_in_sixteen_bytes() {
        let store = ParamStore::<f32>::new();
        let bytes = to_bytes(&store);
        assert_eq!(bytes.len(), 16);
        let loaded: ParamStore<f32> = read_checkpoint(&bytes[..]).unwrap();
        assert!(loaded.is_empty());
    }

    #[test]
    fn scalar_entry_payload_is_exactly_four_value_bytes() {
        let mut store = ParamStore::<f32>::new();
        store.insert("a", Tensor::scalar(1.5f32));
        let bytes = to_bytes(&store);
        // 16 header + 8 name_len + 1 name + 8 rank + 16 dims + 4 value.
        assert_eq!(bytes.len(), 53);
        assert_eq!(&bytes[49..], 1.5f32.to_le_bytes());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let mut bytes = to_bytes(&sample_store());
        bytes[0] = b'X';
        let got = read_checkpoint::<f32, _>(&bytes[..]);
        assert!(matches!(got, Err(CheckpointError::BadMagic { .. })));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = to_bytes(&sample_store());
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        let got = read_checkpoint::<f32, _>(&bytes[..]);
        assert!(matches!(got, Err(CheckpointError::UnsupportedVersion { got: 7 })));
    }

    #[test]
    fn every_possible_truncation_is_detected() {
        let bytes = to_bytes(&sample_store());
        for cut in 0..bytes.len() {
            let got = read_checkpoint::<f32, _>(&bytes[..cut]);
            assert!(
                matches!(got, Err(CheckpointError::Truncated { .. })),
                "prefix of {cut} bytes was not reported as truncated"
            );
        }
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = to_bytes(&sample_store());
        bytes.push(0);
        let got = read_checkpoint::<f32, _>(&bytes[..]);
        assert!(matches!(got, Err(CheckpointError::TrailingBytes)));
    }

    #[test]
    fn duplicate_names_are_rejected() {
        // Hand-built archive with "a" appearing twice.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        for _ in 0..2 {
            bytes.extend_from_slice(&1u64.to_le_bytes());
            bytes.push(b'a');
            bytes.extend_from_slice(&2u64.to_le_bytes());
            bytes.extend_from_slice(&1u64.to_le_bytes());
            bytes.extend_from_slice(&1u64.to_le_bytes());
            bytes.extend_from_slice(&0.25f32.to_le_bytes());
        }
        let got = read_checkpoint::<f32, _>(&bytes[..]);
        assert!(matches!(got, Err(CheckpointError::DuplicateName(n)) if n == "a"));
    }

    #[test]
    fn non_matrix_rank_is_rejected() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.push(b'a');
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&3u64.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 12]);
        let got = read_checkpoint::<f32, _>(&bytes[..]);
        assert!(matches!(got, Err(CheckpointError::BadRank { got: 1, .. })));
    }

    #[test]
    fn f64_values_load_back_at_f32_resolution() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::new(1, 2, vec![0.1f64, 1.0 / 3.0]).unwrap());
        let mut buf = Vec::new();
        write_checkpoint(&store, &mut buf).unwrap();
        let loaded: ParamStore<f64> = read_checkpoint(&buf[..]).unwrap();
        let got = loaded.get("w").data();
        assert_eq!(got[0], 0.1f32 as f64);
        assert_eq!(got[1], (1.0f32 / 3.0) as f64);
        assert_ne!(got[0], 0.1f64);
    }

    #[test]
    fn file_round_trip_via_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let store = sample_store();
        save_checkpoint(&store, &path).unwrap();
        let loaded: ParamStore<f32> = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.len(), store.len());
        for ((n0, t0), (n1, t1)) in store.iter().zip(loaded.iter()) {
            assert_eq!(n0, n1);
            assert_eq!(t0.data(), t1.data());
        }
    }
}
