//! Checkpoint files: a flat little-endian f64 blob plus a JSON manifest
//! listing names, shapes, offsets, and optimizer state.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "sagechain-checkpoint-v1";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BlobEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Offset into the blob, counted in f64 slots.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub entries: Vec<BlobEntry>,
    /// Free-form model/optimizer metadata (variant, dims, Adam scalars, ...).
    pub meta: serde_json::Value,
}

/// Write `<prefix>.bin` and `<prefix>.json`.
pub fn save_blobs(
    prefix: &Path,
    blobs: &[(String, usize, usize, &[f64])],
    meta: serde_json::Value,
) -> Result<()> {
    let mut entries = Vec::with_capacity(blobs.len());
    let mut offset = 0usize;
    let mut raw: Vec<u8> = Vec::new();
    for (name, rows, cols, data) in blobs {
        assert_eq!(rows * cols, data.len(), "blob shape mismatch for {name}");
        entries.push(BlobEntry {
            name: name.clone(),
            rows: *rows,
            cols: *cols,
            offset,
            len: data.len(),
        });
        offset += data.len();
        for v in *data {
            raw.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.to_string(),
        entries,
        meta,
    };
    let mut bin = fs::File::create(prefix.with_extension("bin"))?;
    bin.write_all(&raw)?;
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(prefix.with_extension("json"), json)?;
    Ok(())
}

/// Read a checkpoint back as `(name -> (rows, cols, data), meta)`.
pub fn load_blobs(prefix: &Path) -> Result<(BTreeMap<String, (usize, usize, Vec<f64>)>, serde_json::Value)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(prefix.with_extension("json"))?)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Report(format!(
            "unsupported checkpoint format '{}'",
            manifest.format
        )));
    }
    let mut raw = Vec::new();
    fs::File::open(prefix.with_extension("bin"))?.read_to_end(&mut raw)?;
    let total: usize = manifest.entries.iter().map(|e| e.len).sum();
    if raw.len() != total * 8 {
        return Err(Error::Report(format!(
            "checkpoint blob is {} bytes, manifest expects {}",
            raw.len(),
            total * 8
        )));
    }
    let mut map = BTreeMap::new();
    for e in &manifest.entries {
        let mut data = Vec::with_capacity(e.len);
        for k in 0..e.len {
            let at = (e.offset + k) * 8;
            let mut buf = [0u8; 8];
            buf.copy_from_slice(&raw[at..at + 8]);
            data.push(f64::from_le_bytes(buf));
        }
        map.insert(e.name.clone(), (e.rows, e.cols, data));
    }
    Ok((map, manifest.meta))
}
