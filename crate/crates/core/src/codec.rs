//! Byte encodings for tensors and named weight bundles.
//!
//! Tensor record: the magic `DSTN1`, the rank as `u64`, each extent as
//! `u64`, then the values as `f32`; all little-endian, row-major.
//!
//! Bundle: the magic `DSTB1`, the tensor count as `u64`, then per tensor the
//! name length as `u64`, the UTF-8 name, and a tensor record.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const TENSOR_MAGIC: &[u8; 5] = b"DSTN1";
pub const BUNDLE_MAGIC: &[u8; 5] = b"DSTB1";

pub fn encode_tensor<T: Real>(t: &Tensor<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Decode(format!("truncated input at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn magic(&mut self, m: &[u8; 5]) -> Result<()> {
        if self.take(5)? != m {
            return Err(Error::Decode(format!(
                "bad magic, expected {}",
                core::str::from_utf8(m).unwrap_or("?")
            )));
        }
        Ok(())
    }

    fn tensor<T: Real>(&mut self) -> Result<Tensor<T>> {
        self.magic(TENSOR_MAGIC)?;
        let rank = self.u64()? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Decode(format!("unsupported rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut len = 1usize;
        for _ in 0..rank {
            let e = self.u64()? as usize;
            len = len
                .checked_mul(e)
                .ok_or_else(|| Error::Decode("tensor size overflows".into()))?;
            shape.push(e);
        }
        let bytes = self.take(len.checked_mul(4).ok_or_else(|| Error::Decode("tensor size overflows".into()))?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        Tensor::new(shape, data).map_err(|e| Error::Decode(format!("{e}")))
    }
}

pub fn decode_tensor<T: Real>(buf: &[u8]) -> Result<Tensor<T>> {
    let mut r = Reader { buf, pos: 0 };
    let t = r.tensor()?;
    if r.pos != buf.len() {
        return Err(Error::Decode(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(t)
}

pub fn encode_bundle<T: Real>(tensors: &[(String, &Tensor<T>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BUNDLE_MAGIC);
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        encode_tensor(t, &mut out);
    }
    out
}

pub fn decode_bundle<T: Real>(buf: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    let mut r = Reader { buf, pos: 0 };
    r.magic(BUNDLE_MAGIC)?;
    let count = r.u64()? as usize;
    let mut out = Vec::new();
    for _ in 0..count {
        let n = r.u64()? as usize;
        let name = core::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::Decode("tensor name is not UTF-8".into()))?
            .into();
        out.push((name, r.tensor()?));
    }
    if r.pos != buf.len() {
        return Err(Error::Decode(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(out)
}
