//! Binary parameter checkpoints.
//!
//! Layout (little-endian): magic `PTNT`, `u32` version, then for every
//! parameter `u32` name length, UTF-8 name, `u32` rank, `rank × u64` dims and
//! `Π dims × f64` values. Entries run to end of file.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::Tensor;
use crate::error::{PaintError, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PTNT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint<'a, T: Scalar>(entries: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for (name, t) in entries {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            buf.extend_from_slice(&x.as_f64().to_le_bytes());
        }
    }
    buf
}

pub fn write_checkpoint<'a, T: Scalar>(
    path: &Path,
    entries: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_checkpoint(entries))?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(PaintError::Format(format!(
                "truncated checkpoint reading {what}: need {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(PaintError::Format("bad checkpoint magic (expected PTNT)".into()));
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(PaintError::Format(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let mut out = Vec::new();
    while cur.pos < bytes.len() {
        let len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(len, "name")?)
            .map_err(|e| PaintError::Format(format!("parameter name is not UTF-8: {e}")))?
            .to_string();
        let rank = cur.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64("shape")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = cur.take(n * 8, &format!("payload of {name}"))?;
        let data = raw
            .chunks_exact(8)
            .map(|b| T::lit(f64::from_le_bytes(b.try_into().unwrap())))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let a = Tensor::new(vec![2, 3], vec![1.5, -0.25, 3.0e-300, 7.0, 0.1, -0.0]).unwrap();
        let b = Tensor::new(vec![1], vec![std::f64::consts::PI]).unwrap();
        let bytes = encode_checkpoint([("blk.w", &a), ("b", &b)]);
        assert_eq!(&bytes[..4], b"PTNT");
        let back = decode_checkpoint::<f64>(&bytes).unwrap();
        assert_eq!(back[0].0, "blk.w");
        assert_eq!(back[0].1.shape(), &[2, 3]);
        for (x, y) in back[0].1.data().iter().zip(a.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(back[1].1.data(), b.data());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let a = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut bytes = encode_checkpoint([("a", &a)]);
        let err = decode_checkpoint::<f64>(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("truncated"));
        bytes[0] = b'X';
        assert!(decode_checkpoint::<f64>(&bytes).is_err());
    }
}
