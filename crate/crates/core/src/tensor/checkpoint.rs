//! Flat binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "UTWB" | version: u32 | count: u64 |
//!   count x ( name_len: u32 | name: utf-8 | rank: u32 | dims: rank x u64 | values: f32 ... )
//! ```

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"UTWB";
pub const VERSION: u32 = 1;

const MAX_RANK: u32 = 8;

pub fn write_entries<W: Write, S: AsRef<str>>(mut w: W, entries: &[(S, &Tensor<f32>)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u64).to_le_bytes())?;
    for (name, t) in entries {
        let name = name.as_ref().as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|_| {
            Error::Checkpoint(format!("truncated container at byte {} while reading {what}", self.offset))
        })?;
        self.offset += n as u64;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.bytes(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn read_entries<R: Read>(r: R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut c = Cursor { inner: r, offset: 0 };
    if c.bytes(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("missing UTWB magic bytes".into()));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported container version {version}")));
    }
    let count = c.u64("parameter count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let at = c.offset;
        let nlen = c.u32("name length")? as usize;
        let name = String::from_utf8(c.bytes(nlen, "name")?)
            .map_err(|_| Error::Checkpoint(format!("entry name at byte {at} is not UTF-8")))?;
        let rank = c.u32("rank")?;
        if rank > MAX_RANK {
            return Err(Error::Checkpoint(format!("entry `{name}` has implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(c.u64("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = c.bytes(n * 4, "values")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Writes to a sibling temporary file and renames it into place.
pub fn save<S: AsRef<str>>(path: &Path, entries: &[(S, &Tensor<f32>)]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let f = fs::File::create(&tmp).map_err(|e| Error::file(&tmp, e))?;
        write_entries(BufWriter::new(f), entries)?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::file(path, e))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let f = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    read_entries(BufReader::new(f))
}
