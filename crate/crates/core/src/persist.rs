//! Flat little-endian parameter files: magic, config integers, then values.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FlatRecord {
    pub header: Vec<u64>,
    pub values: Vec<f64>,
}

pub fn encode(magic: &[u8], record: &FlatRecord) -> Vec<u8> {
    let mut out = Vec::with_capacity(magic.len() + 16 + 8 * (record.header.len() + record.values.len()));
    out.extend_from_slice(magic);
    out.extend_from_slice(&(record.header.len() as u64).to_le_bytes());
    for h in &record.header {
        out.extend_from_slice(&h.to_le_bytes());
    }
    out.extend_from_slice(&(record.values.len() as u64).to_le_bytes());
    for v in &record.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(magic: &[u8], bytes: &[u8]) -> Result<FlatRecord> {
    let bad = |what: &str| CoreError::Persist(format!("{}: {}", String::from_utf8_lossy(magic), what));
    let rest = bytes.strip_prefix(magic).ok_or_else(|| bad("wrong magic"))?;
    let mut words = rest.chunks_exact(8);
    if !words.remainder().is_empty() {
        return Err(bad("truncated file"));
    }
    let mut next = || words.next().map(|w| <[u8; 8]>::try_from(w).expect("chunk of 8"));
    let n_header = u64::from_le_bytes(next().ok_or_else(|| bad("missing header length"))?);
    let mut header = Vec::new();
    for _ in 0..n_header {
        header.push(u64::from_le_bytes(next().ok_or_else(|| bad("truncated header"))?));
    }
    let n_values = u64::from_le_bytes(next().ok_or_else(|| bad("missing value count"))?);
    let mut values = Vec::new();
    for _ in 0..n_values {
        values.push(f64::from_le_bytes(next().ok_or_else(|| bad("truncated values"))?));
    }
    if next().is_some() {
        return Err(bad("trailing bytes"));
    }
    Ok(FlatRecord { header, values })
}

pub fn write_file(path: &Path, magic: &[u8], record: &FlatRecord) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(magic, record))?;
    Ok(())
}

pub fn read_file(path: &Path, magic: &[u8]) -> Result<FlatRecord> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(magic, &bytes)
}
