//! Flat container of named tensors.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! magic "PDSTCKPT" | version | count
//! count x { name_len | name (UTF-8) | rank | extents[rank] | f32 data (LE) }
//! ```

use std::fs;
use std::path::Path;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PDSTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint<F: Scalar>(records: &[(String, Tensor<F>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_checkpoint<F: Scalar>(buf: &[u8]) -> Result<Vec<(String, Tensor<F>)>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let count = r.u32("count")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > 2 {
            return Err(Error::Format(format!("tensor {name}: unsupported rank {rank}")));
        }
        let mut extents = Vec::with_capacity(rank);
        for _ in 0..rank {
            extents.push(r.u32("extent")? as usize);
        }
        let (rows, cols) = if rank == 1 { (1, extents[0]) } else { (extents[0], extents[1]) };
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format(format!("tensor {name}: extents overflow")))?;
        let bytes = r.take(n.saturating_mul(4), "tensor data")?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| F::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        out.push((name, Tensor::from_vec(rows, cols, data)?));
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after {count} tensors",
            buf.len() - r.pos
        )));
    }
    Ok(out)
}

pub fn write_checkpoint<F: Scalar>(path: &Path, records: &[(String, Tensor<F>)]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, encode_checkpoint(records)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<F: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<F>)>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&buf)
}
