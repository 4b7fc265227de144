//! Versioned binary container shared by corpus files and model checkpoints.
//!
//! Layout: 8-byte magic, u32 version, u64 header length, u64 payload length
//! (f64 count), 32-byte SHA-256 of the payload bytes, JSON header, then the
//! raw little-endian f64 payload. The checksum is verified on load.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported container version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },
    #[error("truncated container: needed {needed} bytes, had {had}")]
    Truncated { needed: usize, had: usize },
    #[error("payload checksum mismatch; file is corrupt")]
    Checksum,
    #[error("header json: {0}")]
    Json(#[from] serde_json::Error),
}

pub struct Container {
    pub version: u32,
    pub header: serde_json::Value,
    pub payload: Vec<f64>,
}

pub fn write_container(
    path: &Path,
    magic: &[u8; 8],
    version: u32,
    header: &serde_json::Value,
    payload: &[f64],
) -> Result<(), ContainerError> {
    let header_bytes = serde_json::to_vec(header)?;
    let mut payload_bytes = Vec::with_capacity(payload.len() * 8);
    for v in payload {
        payload_bytes.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&payload_bytes);

    let mut file = fs::File::create(path)?;
    file.write_all(magic)?;
    file.write_all(&version.to_le_bytes())?;
    file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    file.write_all(&(payload.len() as u64).to_le_bytes())?;
    file.write_all(&digest)?;
    file.write_all(&header_bytes)?;
    file.write_all(&payload_bytes)?;
    Ok(())
}

pub fn read_container(
    path: &Path,
    magic: &[u8; 8],
    supported_version: u32,
) -> Result<Container, ContainerError> {
    let bytes = fs::read(path)?;
    let need = |n: usize| -> Result<(), ContainerError> {
        if bytes.len() < n {
            Err(ContainerError::Truncated {
                needed: n,
                had: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(52)?;
    if &bytes[..8] != magic {
        return Err(ContainerError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(&bytes[..8]).into_owned(),
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != supported_version {
        return Err(ContainerError::Version {
            found: version,
            supported: supported_version,
        });
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let payload_len = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    let digest_stored = &bytes[28..60];
    let header_start = 60;
    need(header_start + header_len + payload_len * 8)?;
    let header_bytes = &bytes[header_start..header_start + header_len];
    let payload_bytes =
        &bytes[header_start + header_len..header_start + header_len + payload_len * 8];
    if Sha256::digest(payload_bytes).as_slice() != digest_stored {
        return Err(ContainerError::Checksum);
    }
    let header = serde_json::from_slice(header_bytes)?;
    let payload = payload_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Container {
        version,
        header,
        payload,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAGIC: &[u8; 8] = b"SMTEST01";

    #[test]
    fn round_trip_preserves_floats_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        let payload = vec![0.1, -2.5e-300, f64::MAX, 1.0 / 3.0];
        let header = serde_json::json!({"kind": "test", "n": 4});
        write_container(&path, MAGIC, 1, &header, &payload).unwrap();
        let c = read_container(&path, MAGIC, 1).unwrap();
        assert_eq!(c.payload, payload);
        assert_eq!(c.header["kind"], "test");
    }

    #[test]
    fn corrupted_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        write_container(&path, MAGIC, 1, &serde_json::json!({}), &[1.0]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_container(&path, MAGIC, 1),
            Err(ContainerError::BadMagic { .. })
        ));
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        write_container(&path, MAGIC, 1, &serde_json::json!({}), &[1.0, 2.0]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_container(&path, MAGIC, 1),
            Err(ContainerError::Checksum)
        ));
    }

    #[test]
    fn wrong_version_is_structured() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        write_container(&path, MAGIC, 3, &serde_json::json!({}), &[]).unwrap();
        assert!(matches!(
            read_container(&path, MAGIC, 1),
            Err(ContainerError::Version { found: 3, .. })
        ));
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        write_container(&path, MAGIC, 1, &serde_json::json!({}), &[1.0, 2.0, 3.0]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(
            read_container(&path, MAGIC, 1),
            Err(ContainerError::Truncated { .. })
        ));
    }
}
