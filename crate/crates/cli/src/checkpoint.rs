//! Parameter checkpoint archives.
//!
//! One file holds a JSON manifest (names, shapes, dtype, offsets, format
//! version) followed by the raw little-endian f64 payload:
//!
//! ```text
//! [8]  magic "FSEGCKPT"
//! [4]  u32 version
//! [4]  u32 manifest byte length
//! [..] manifest JSON
//! [..] payload (concatenated f64 LE buffers)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use floodseg_core::nn::{StateDict, StateEntry};

use crate::io_util::write_atomic;

pub const CKPT_MAGIC: [u8; 8] = *b"FSEGCKPT";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic {found:?}, expected {CKPT_MAGIC:?}")]
    BadMagic { found: Vec<u8> },

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated archive: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("entry {name}: payload range {offset}..{end} out of bounds ({payload} bytes)")]
    Range {
        name: String,
        offset: usize,
        end: usize,
        payload: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    /// byte offset into the payload
    offset: usize,
    /// element count
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    entries: Vec<ManifestEntry>,
}

pub fn to_bytes(entries: &[StateEntry]) -> Vec<u8> {
    let mut manifest = Manifest { entries: Vec::with_capacity(entries.len()) };
    let mut offset = 0usize;
    for e in entries {
        manifest.entries.push(ManifestEntry {
            name: e.name.clone(),
            shape: e.shape.clone(),
            dtype: "f64".to_string(),
            offset,
            count: e.values.len(),
        });
        offset += e.values.len() * 8;
    }
    let manifest_json = serde_json::to_vec(&manifest).expect("manifest serializes");

    let mut bytes = Vec::with_capacity(16 + manifest_json.len() + offset);
    bytes.extend_from_slice(&CKPT_MAGIC);
    bytes.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(manifest_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&manifest_json);
    for e in entries {
        for v in &e.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

pub fn from_bytes(bytes: &[u8]) -> Result<StateDict, CheckpointError> {
    if bytes.len() < 16 {
        return Err(CheckpointError::Truncated { expected: 16, actual: bytes.len() });
    }
    if bytes[..8] != CKPT_MAGIC {
        return Err(CheckpointError::BadMagic { found: bytes[..8].to_vec() });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let manifest_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + manifest_len {
        return Err(CheckpointError::Truncated {
            expected: 16 + manifest_len,
            actual: bytes.len(),
        });
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[16..16 + manifest_len])
        .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let payload = &bytes[16 + manifest_len..];

    let expected_payload: usize = manifest.entries.iter().map(|e| e.count * 8).sum();
    if payload.len() != expected_payload {
        return Err(CheckpointError::Truncated {
            expected: 16 + manifest_len + expected_payload,
            actual: bytes.len(),
        });
    }

    let mut dict = StateDict::new();
    for e in manifest.entries {
        if e.dtype != "f64" {
            return Err(CheckpointError::Manifest(format!(
                "entry {}: unsupported dtype {}",
                e.name, e.dtype
            )));
        }
        let end = e.offset + e.count * 8;
        if end > payload.len() {
            return Err(CheckpointError::Range {
                name: e.name,
                offset: e.offset,
                end,
                payload: payload.len(),
            });
        }
        let numel: usize = e.shape.iter().product();
        if numel != e.count {
            return Err(CheckpointError::Manifest(format!(
                "entry {}: shape {:?} does not cover {} elements",
                e.name, e.shape, e.count
            )));
        }
        let values = payload[e.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        dict.insert(
            e.name.clone(),
            StateEntry { name: e.name, shape: e.shape, values },
        );
    }
    Ok(dict)
}

pub fn save(path: &Path, entries: &[StateEntry]) -> Result<(), CheckpointError> {
    write_atomic(path, &to_bytes(entries))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<StateDict, CheckpointError> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries() -> Vec<StateEntry> {
        vec![
            StateEntry {
                name: "net.conv.weight".into(),
                shape: vec![2, 1, 2, 2],
                values: vec![0.1, -0.2, 3.5e-7, 4.0, 5.5, -6.25, 7.0, 1e300],
            },
            StateEntry {
                name: "net.bn.running_mean".into(),
                shape: vec![2],
                values: vec![f64::MIN_POSITIVE, -0.0],
            },
        ]
    }

    #[test]
    fn round_trips_bit_exactly() {
        let src = entries();
        let bytes = to_bytes(&src);
        let dict = from_bytes(&bytes).unwrap();
        assert_eq!(dict.len(), 2);
        for e in &src {
            let got = &dict[&e.name];
            assert_eq!(got.shape, e.shape);
            // compare bit patterns, not values (distinguishes -0.0 from 0.0)
            let a: Vec<u64> = got.values.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = e.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
        // serializing the loaded dict in manifest order reproduces the bytes
        let reordered: Vec<StateEntry> = src.iter().map(|e| dict[&e.name].clone()).collect();
        assert_eq!(to_bytes(&reordered), bytes);
    }

    #[test]
    fn bad_magic_is_detected() {
        let mut bytes = to_bytes(&entries());
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(CheckpointError::BadMagic { .. })));
    }

    #[test]
    fn truncation_is_detected_with_counts() {
        let bytes = to_bytes(&entries());
        let cut = bytes.len() - 3;
        match from_bytes(&bytes[..cut]).unwrap_err() {
            CheckpointError::Truncated { expected, actual } => {
                assert_eq!(expected, bytes.len());
                assert_eq!(actual, cut);
            }
            other => panic!("expected truncation, got {other}"),
        }
    }

    #[test]
    fn version_mismatch_is_detected() {
        let mut bytes = to_bytes(&entries());
        bytes[8] = 9;
        assert!(matches!(
            from_bytes(&bytes),
            Err(CheckpointError::UnsupportedVersion(9))
        ));
    }
}
