//! Checkpoint container: named flat arrays plus a JSON metadata header.
//!
//! Byte layout, version 1 (all integers little-endian):
//!
//! ```text
//! offset 0   8 bytes   magic b"CONVLM\x00\x01"
//! offset 8   8 bytes   u64 header length H
//! offset 16  H bytes   UTF-8 JSON header
//! offset 16+H          array payload, tightly packed in header order
//! ```
//!
//! The header carries `version`, `dtype` ("f32" | "f64"), a `fingerprint`
//! (FNV-1a 64 over the canonical `meta` JSON), the caller-supplied `meta`
//! document (model config, vocabulary, pipeline flags), and an `arrays`
//! table of `{name, shape, offset, len}` with offsets relative to the start
//! of the payload and lengths in scalar counts.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::numerics::Real;

const MAGIC: &[u8; 8] = b"CONVLM\x00\x01";

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    fingerprint: String,
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

/// FNV-1a 64-bit over a byte string, reported as 16 hex digits. Used both as
/// the checkpoint config fingerprint and to identify stop-word lists.
pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

pub fn save_checkpoint<R: Real>(
    path: &Path,
    meta: &serde_json::Value,
    arrays: &[(String, &Tensor<R>)],
) -> Result<()> {
    let mut entries = Vec::with_capacity(arrays.len());
    let mut offset = 0usize;
    for (name, t) in arrays {
        entries.push(ArrayEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            len: t.numel(),
        });
        offset += t.numel() * R::BYTE_WIDTH;
    }
    let header = Header {
        version: 1,
        dtype: R::DTYPE_NAME.to_string(),
        fingerprint: fnv1a_hex(serde_json::to_string(meta)?.as_bytes()),
        meta: meta.clone(),
        arrays: entries,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + header_bytes.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for (_, t) in arrays {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub struct LoadedCheckpoint<R: Real> {
    pub meta: serde_json::Value,
    pub fingerprint: String,
    pub arrays: Vec<(String, Tensor<R>)>,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<(Header, usize)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::data(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + hlen {
        return Err(Error::data(format!("{}: truncated header", path.display())));
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + hlen])
        .map_err(|e| Error::data(format!("{}: bad header: {e}", path.display())))?;
    if header.version != 1 {
        return Err(Error::data(format!(
            "{}: unsupported checkpoint version {}",
            path.display(),
            header.version
        )));
    }
    Ok((header, 16 + hlen))
}

/// Read metadata without materializing arrays.
pub fn peek_checkpoint(path: &Path) -> Result<(String, serde_json::Value)> {
    let bytes = fs::read(path)?;
    let (header, _) = parse_header(&bytes, path)?;
    Ok((header.dtype, header.meta))
}

pub fn load_checkpoint<R: Real>(path: &Path) -> Result<LoadedCheckpoint<R>> {
    let bytes = fs::read(path)?;
    let (header, payload_start) = parse_header(&bytes, path)?;
    if header.dtype != R::DTYPE_NAME {
        return Err(Error::data(format!(
            "{}: checkpoint dtype is {}, requested {}",
            path.display(),
            header.dtype,
            R::DTYPE_NAME
        )));
    }
    let payload = &bytes[payload_start..];
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for entry in &header.arrays {
        let want: usize = entry.shape.iter().product();
        if want != entry.len {
            return Err(Error::data(format!(
                "{}: array {} shape/len mismatch",
                path.display(),
                entry.name
            )));
        }
        let start = entry.offset;
        let end = start + entry.len * R::BYTE_WIDTH;
        if end > payload.len() {
            return Err(Error::data(format!(
                "{}: array {} exceeds payload",
                path.display(),
                entry.name
            )));
        }
        let data: Vec<R> = payload[start..end]
            .chunks_exact(R::BYTE_WIDTH)
            .map(R::read_le)
            .collect();
        arrays.push((entry.name.clone(), Tensor::new(entry.shape.clone(), data)?));
    }
    Ok(LoadedCheckpoint {
        meta: header.meta,
        fingerprint: header.fingerprint,
        arrays,
    })
}
