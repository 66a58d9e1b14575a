//! Record-based binary container shared by model checkpoints and forests.
//!
//! Layout (little-endian): 4-byte magic, u32 version, u32 metadata length,
//! UTF-8 JSON metadata, u32 record count, then per record: u32 name length,
//! name bytes, u32 rank, rank × u32 extents, and the f32 values.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn encode(magic: &[u8; 4], version: u32, meta: &str, records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
        for &d in &r.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &r.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Sequential little-endian reader that reports truncation.
pub struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Truncated(format!(
                    "{what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Checks magic and version, returning a cursor positioned after them.
pub fn open<'a>(bytes: &'a [u8], magic: &[u8; 4], version: u32) -> Result<Cursor<'a>> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        let found = &bytes[..bytes.len().min(4)];
        return Err(Error::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(found)
        )));
    }
    let mut c = Cursor::new(bytes);
    c.take(4, "magic")?;
    let found = c.u32("version")?;
    if found != version {
        return Err(Error::Version {
            found,
            expected: version,
        });
    }
    Ok(c)
}

pub fn decode(bytes: &[u8], magic: &[u8; 4], version: u32) -> Result<(String, Vec<Record>)> {
    let mut c = open(bytes, magic, version)?;
    let meta_len = c.u32("metadata length")? as usize;
    let meta = String::from_utf8(c.take(meta_len, "metadata")?.to_vec())
        .map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
    let count = c.u32("record count")?;
    let mut records = Vec::new();
    for _ in 0..count {
        let nlen = c.u32("record name length")? as usize;
        let name = String::from_utf8(c.take(nlen, "record name")?.to_vec())
            .map_err(|_| Error::Format("record name is not UTF-8".into()))?;
        let rank = c.u32("record rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("record extent")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = c.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Format("record too large".into()))?,
            &name,
        )?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        records.push(Record { name, shape, values });
    }
    if c.remaining() != 0 {
        return Err(Error::Format(format!(
            "{} trailing bytes after last record",
            c.remaining()
        )));
    }
    Ok((meta, records))
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
