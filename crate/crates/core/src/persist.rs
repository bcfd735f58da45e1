//! Model files: a JSON header followed by a binary matrix block.
//!
//! ```text
//! magic [u8; 4] | header length u32 | header JSON | rows u32 | cols u32 | rows × cols f64
//! ```
//!
//! Integers and reals are little-endian, matching the descriptor cache.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model file {path}: {reason}")]
    Malformed { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, PersistError>;

pub fn encode<H: Serialize>(magic: [u8; 4], header: &H, block: &[Vec<f64>]) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("model header serializes");
    let cols = block.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(16 + json.len() + block.len() * cols * 8);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(block.len() as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for row in block {
        assert_eq!(row.len(), cols, "ragged matrix block");
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode<H: DeserializeOwned>(magic: [u8; 4], bytes: &[u8], path: &str) -> Result<(H, Vec<Vec<f64>>)> {
    let bad = |reason: &str| PersistError::Malformed {
        path: path.to_string(),
        reason: reason.to_string(),
    };
    let u32_at = |at: usize| -> Result<usize> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
            .ok_or_else(|| bad("truncated"))
    };
    if bytes.get(..4) != Some(&magic[..]) {
        return Err(bad("bad magic"));
    }
    let hlen = u32_at(4)?;
    let json = bytes.get(8..8 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header = serde_json::from_slice(json).map_err(|e| bad(&e.to_string()))?;
    let at = 8 + hlen;
    let (rows, cols) = (u32_at(at)?, u32_at(at + 4)?);
    let data = &bytes[at + 8..];
    if data.len() != rows * cols * 8 {
        return Err(bad("matrix block size mismatch"));
    }
    let block = data
        .chunks_exact(8 * cols.max(1))
        .take(rows)
        .map(|row| {
            row.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        })
        .collect::<Vec<Vec<f64>>>();
    let block = if cols == 0 { vec![Vec::new(); rows] } else { block };
    Ok((header, block))
}

pub fn save<H: Serialize>(path: &Path, magic: [u8; 4], header: &H, block: &[Vec<f64>]) -> Result<()> {
    fs::write(path, encode(magic, header, block)).map_err(|source| PersistError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load<H: DeserializeOwned>(path: &Path, magic: [u8; 4]) -> Result<(H, Vec<Vec<f64>>)> {
    let bytes = fs::read(path).map_err(|source| PersistError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(magic, &bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encodes_header_then_block() {
        let bytes = encode(*b"TEST", &serde_json::json!({"k": 1}), &[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(&bytes[..4], b"TEST");
        let (h, m): (serde_json::Value, _) = decode(*b"TEST", &bytes, "mem").unwrap();
        assert_eq!(h["k"], 1);
        assert_eq!(m, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!(decode::<serde_json::Value>(*b"NOPE", &bytes, "mem").is_err());
        assert!(decode::<serde_json::Value>(*b"TEST", &bytes[..bytes.len() - 1], "mem").is_err());
    }
}
