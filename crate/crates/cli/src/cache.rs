//! Binary cache of an encoded table, written by `ingest` and accepted by
//! `train` in place of the raw CSV. Deterministic layout: identical inputs
//! produce identical bytes.

use std::io::{Read, Write};
use std::path::Path;

use sagechain_core::data::table::{Cell, RawTable};
use sagechain_core::error::{Error, Result};
use sagechain_core::DatasetId;

const MAGIC: &[u8; 8] = b"SAGECSH1";

pub const CACHE_SUFFIX: &str = ".ingest.bin";

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn read_u32(buf: &[u8], at: &mut usize) -> Result<u32> {
    let end = *at + 4;
    if end > buf.len() {
        return Err(Error::Report("truncated cache file".into()));
    }
    let v = u32::from_le_bytes(buf[*at..end].try_into().unwrap());
    *at = end;
    Ok(v)
}

fn read_str(buf: &[u8], at: &mut usize) -> Result<String> {
    let len = read_u32(buf, at)? as usize;
    let end = *at + len;
    if end > buf.len() {
        return Err(Error::Report("truncated cache file".into()));
    }
    let s = String::from_utf8(buf[*at..end].to_vec())
        .map_err(|_| Error::Report("cache holds invalid utf-8".into()))?;
    *at = end;
    Ok(s)
}

pub fn write_cache(table: &RawTable, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    write_str(&mut out, table.dataset_id.as_str());
    out.extend_from_slice(&(table.column_names.len() as u32).to_le_bytes());
    for name in &table.column_names {
        write_str(&mut out, name);
    }
    out.extend_from_slice(&(table.rows.len() as u32).to_le_bytes());
    out.extend_from_slice(&(table.rejected_rows as u32).to_le_bytes());
    for row in &table.rows {
        for cell in row {
            match cell {
                Cell::Num(v) => {
                    out.push(0);
                    out.extend_from_slice(&v.to_le_bytes());
                }
                Cell::Text(s) => {
                    out.push(1);
                    write_str(&mut out, s);
                }
            }
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

pub fn read_cache(path: &Path) -> Result<RawTable> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::Report(format!("cannot open cache '{}': {e}", path.display())))?
        .read_to_end(&mut buf)?;
    if buf.len() < 8 || &buf[..8] != MAGIC {
        return Err(Error::Report(format!(
            "'{}' is not a sagechain ingest cache",
            path.display()
        )));
    }
    let mut at = 8;
    let dataset_id = DatasetId::parse(&read_str(&buf, &mut at)?)?;
    let n_cols = read_u32(&buf, &mut at)? as usize;
    let mut column_names = Vec::with_capacity(n_cols);
    for _ in 0..n_cols {
        column_names.push(read_str(&buf, &mut at)?);
    }
    let n_rows = read_u32(&buf, &mut at)? as usize;
    let rejected = read_u32(&buf, &mut at)? as usize;
    let mut rows = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let mut row = Vec::with_capacity(n_cols);
        for _ in 0..n_cols {
            if at >= buf.len() {
                return Err(Error::Report("truncated cache file".into()));
            }
            let tag = buf[at];
            at += 1;
            match tag {
                0 => {
                    let end = at + 8;
                    if end > buf.len() {
                        return Err(Error::Report("truncated cache file".into()));
                    }
                    row.push(Cell::Num(f64::from_le_bytes(buf[at..end].try_into().unwrap())));
                    at = end;
                }
                1 => row.push(Cell::Text(read_str(&buf, &mut at)?)),
                other => {
                    return Err(Error::Report(format!("bad cell tag {other} in cache")));
                }
            }
        }
        rows.push(row);
    }
    Ok(RawTable {
        dataset_id,
        column_names,
        rows,
        rejected_rows: rejected,
    })
}
