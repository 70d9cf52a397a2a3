//! Versioned weights file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "GDWEIGHT"
//! version    u32
//! kind       u32 length + utf-8
//! header     u32 length + utf-8 JSON (architecture, normalization, basis info)
//! count      u32
//! tensors    count x { name: u32 length + utf-8, ndim: u32, dims: ndim x u64,
//!                      data: prod(dims) x f32 }
//! ```

use std::path::Path;

use super::params::ParamStore;
use super::tape::Mat;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GDWEIGHT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn from_mat(name: impl Into<String>, m: &Mat) -> Self {
        Self { name: name.into(), shape: vec![m.nrows(), m.ncols()], data: m.iter().map(|&x| x as f32).collect() }
    }

    pub fn to_mat(&self) -> Result<Mat> {
        let (r, c) = match self.shape[..] {
            [r, c] => (r, c),
            [n] => (1, n),
            _ => return Err(Error::format("weights", format!("{}: expected a 2-d tensor", self.name))),
        };
        Mat::from_shape_vec((r, c), self.data.iter().map(|&x| x as f64).collect())
            .map_err(|e| Error::format("weights", format!("{}: {e}", self.name)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightsFile {
    pub kind: String,
    pub header: String,
    pub tensors: Vec<NamedTensor>,
}

impl WeightsFile {
    pub fn new(kind: impl Into<String>, header: String) -> Self {
        Self { kind: kind.into(), header, tensors: Vec::new() }
    }

    pub fn push_store(&mut self, store: &ParamStore) {
        for id in store.ids() {
            self.tensors.push(NamedTensor::from_mat(store.name(id), store.value(id)));
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Copies every tensor of `store` from this file.
    pub fn load_store(&self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let t = self.tensor(&name).ok_or_else(|| Error::format("weights", format!("missing tensor {name}")))?;
            store.set(&name, t.to_mat()?)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        put_str(&mut out, &self.header);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::format("weights", "bad magic"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::format("weights", format!("unsupported version {version}")));
        }
        let kind = r.string()?;
        let header = r.string()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.ok_or_else(|| Error::format("weights", format!("{name}: shape overflow")))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::format("weights", "size overflow"))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::format("weights", "trailing bytes"));
        }
        Ok(Self { kind, header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(Error::io(path))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(Error::io(path))?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format("weights", "truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::format("weights", e.to_string()))
    }
}
