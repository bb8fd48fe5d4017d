//! `CKP1` tensor archives: magic, u32 count, then per tensor a u32 name
//! length, the UTF-8 name, u8 rank, u32 dims and f32 data. Little-endian.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{GradError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CKP1";

pub fn write_tensors<W: Write>(mut w: W, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[t.shape().len() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(GradError::Format(format!("truncated at byte {}", self.pos)));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn tensors_from_bytes(buf: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4).map_err(|_| GradError::Format("missing magic".into()))? != MAGIC {
        return Err(GradError::Format("bad magic, expected CKP1".into()));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| GradError::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = c.take(1)?[0] as usize;
        if ndim > 4 {
            return Err(GradError::Format(format!("tensor {name} has rank {ndim}")));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(c.u32()? as usize);
        }
        let n: usize = dims.iter().product();
        let bytes = c.take(n.checked_mul(4).ok_or_else(|| GradError::Format("tensor too large".into()))?)?;
        let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        out.push((name, Tensor::new(&dims, data)?));
    }
    if c.pos != buf.len() {
        return Err(GradError::Format(format!("{} trailing bytes", buf.len() - c.pos)));
    }
    Ok(out)
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    tensors_from_bytes(&buf)
}

pub fn save(path: impl AsRef<Path>, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    let mut buf = Vec::new();
    write_tensors(&mut buf, tensors)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor<f32>)>> {
    tensors_from_bytes(&std::fs::read(path)?)
}
