//! Flat binary checkpoint container.
//!
//! Layout (little-endian): magic `NSBGCKPT`, `u32` version, `u32` tensor
//! count, then per tensor: `u32` name length, UTF-8 name, `u32` rank, `rank`
//! × `u32` dims, and `prod(dims)` × `f32` values.

use std::io::{Read, Write};
use std::path::Path;

use super::params::ParamStore;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"NSBGCKPT";
pub const VERSION: u32 = 1;

/// One stored tensor: name, shape and values (widened from `f32`).
pub type Record = (String, Vec<usize>, Vec<f64>);

pub fn encode(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, shape, values) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format("checkpoint truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::format("not an NSBG checkpoint"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let count = c.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::format("tensor name is not UTF-8"))?
            .to_string();
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(4).ok_or_else(|| Error::format("tensor too large"))?)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        records.push((name, shape, values));
    }
    if c.pos != bytes.len() {
        return Err(Error::format("trailing bytes after checkpoint"));
    }
    Ok(records)
}

pub fn records_of(store: &ParamStore) -> Vec<Record> {
    store
        .iter()
        .map(|(n, t)| (n.to_string(), t.shape().to_vec(), t.to_vec()))
        .collect()
}

pub fn save(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(&records_of(store)))?;
    Ok(())
}

pub fn load(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    store.load(&decode(&bytes)?)
}
