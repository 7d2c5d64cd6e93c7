use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::train::EpochLog;
use super::{NamedTensor, Weights};

/// Leading bytes of a weights file.
pub const WEIGHTS_MAGIC: &[u8; 4] = b"PNW1";

/// Writes weights as `PNW1`, a u32 tensor count, then per tensor the name
/// (u32 length + UTF-8), u32 rank, u64 dims and f64 values, all little-endian.
pub fn save_weights(w: &Weights, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut f = BufWriter::new(File::create(path).map_err(io)?);
    let mut buf = Vec::new();
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.extend_from_slice(&(w.tensors.len() as u32).to_le_bytes());
    for t in &w.tensors {
        buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    f.write_all(&buf).map_err(io)?;
    f.flush().map_err(io)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end =
            self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::format(self.path, "truncated weights file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_weights(path: &Path) -> Result<Weights> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?).read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor { bytes: &bytes, pos: 0, path };
    if c.take(4)? != WEIGHTS_MAGIC {
        return Err(Error::format(path, "not a PNW1 weights file"));
    }
    let n = c.u32()?;
    let mut tensors = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let len = c.u32()? as usize;
        let name = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| Error::format(path, "tensor name is not UTF-8"))?;
        let rank = c.u32()?;
        let shape = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::format(path, "tensor too large"))?;
        let raw = c.take(count.checked_mul(8).ok_or_else(|| Error::format(path, "tensor too large"))?)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        tensors.push(NamedTensor { name, shape, data });
    }
    if c.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after weights"));
    }
    Ok(Weights { tensors })
}

/// One CSV row per epoch: `epoch,loss,train_top1`.
pub fn write_training_log(log: &[EpochLog], path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut f = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(f, "epoch,loss,train_top1").map_err(io)?;
    for r in log {
        writeln!(f, "{},{},{}", r.epoch, r.loss, r.train_top1).map_err(io)?;
    }
    f.flush().map_err(io)
}
