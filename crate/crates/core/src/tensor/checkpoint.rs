//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "OSCK"
//! version    u32      currently 1
//! dtype      u8       1 = f32, 2 = f64
//! reserved   3 bytes  zero
//! n_meta     u32
//!   n_meta x { key_len u32, key utf-8, val_len u32, val utf-8 }
//! n_params   u32
//!   n_params x { name_len u32, name utf-8, ndim u32, dims ndim x u64,
//!                values prod(dims) x IEEE-754 little-endian }
//! ```
//!
//! Parameters are written in name order, so equal stores give equal bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"OSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<T: Scalar>(
    mut out: impl Write,
    store: &ParamStore<T>,
    meta: &BTreeMap<String, String>,
) -> std::io::Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&[T::DTYPE, 0, 0, 0]);
    let put_str = |buf: &mut Vec<u8>, s: &str| {
        buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
        buf.extend_from_slice(s.as_bytes());
    };
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    for (k, v) in meta {
        put_str(&mut buf, k);
        put_str(&mut buf, v);
    }
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        put_str(&mut buf, name);
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.to_le(&mut buf);
        }
    }
    out.write_all(&buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated: wanted {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let at = self.pos;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format {
            what: "checkpoint",
            offset: at,
            reason: "invalid utf-8".into(),
        })
    }

    fn err(&self, reason: String) -> Error {
        Error::Format {
            what: "checkpoint",
            offset: self.pos,
            reason,
        }
    }
}

pub fn read_checkpoint<T: Scalar>(
    mut input: impl Read,
) -> Result<(ParamStore<T>, BTreeMap<String, String>)> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<checkpoint>", e))?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format {
            what: "checkpoint",
            offset: 0,
            reason: "bad magic".into(),
        });
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(c.err(format!("unsupported version {version}")));
    }
    let dtype = c.take(4)?[0];
    if dtype != T::DTYPE {
        return Err(c.err(format!("dtype tag {dtype}, expected {}", T::DTYPE)));
    }
    let width = std::mem::size_of::<T>();
    let mut meta = BTreeMap::new();
    for _ in 0..c.u32()? {
        let k = c.string()?;
        let v = c.string()?;
        meta.insert(k, v);
    }
    let mut store = ParamStore::new();
    for _ in 0..c.u32()? {
        let name = c.string()?;
        let ndim = c.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(c.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = c.take(numel * width)?;
        let data = raw.chunks_exact(width).map(T::from_le).collect();
        store.insert(name, Tensor::new(&shape, data)?);
    }
    if c.pos != bytes.len() {
        return Err(c.err("trailing bytes".into()));
    }
    Ok((store, meta))
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    store: &ParamStore<T>,
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    write_checkpoint(std::io::BufWriter::new(file), store, meta).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(ParamStore<T>, BTreeMap<String, String>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}
