//! Versioned binary archive of named tensors plus string metadata.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"VICNTMAR"
//! version u32
//! n_meta  u32, then per entry: key_len u32, key, value_len u32, value
//! n_tens  u32, then per tensor: name_len u32, name, rows u64, cols u64, rows*cols f64
//! sha256  32 bytes over everything above
//! ```
//!
//! Loading verifies the digest before parsing, so a corrupted header fails
//! cleanly instead of yielding a partially read archive.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::params::Params;
use super::Matrix;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"VICNTMAR";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Matrix)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.insert(key.into(), value.into());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| bad(format!("missing metadata `{key}`")))
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Matrix) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn tensor(&self, name: &str) -> Result<&Matrix> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| bad(format!("missing tensor `{name}`")))
    }

    /// Tensor `name`, which must have the given shape.
    pub fn tensor_shaped(&self, name: &str, shape: (usize, usize)) -> Result<&Matrix> {
        let t = self.tensor(name)?;
        if t.shape() != shape {
            return Err(bad(format!(
                "tensor `{name}` has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    }

    /// Appends every trainable tensor of `p` under `prefix.`.
    pub fn push_params<P: Params + ?Sized>(&mut self, prefix: &str, p: &P) {
        for (name, t) in p.tensors() {
            self.push(format!("{prefix}.{name}"), t.clone());
        }
    }

    /// Overwrites the trainable tensors of `p` from `prefix.`-named entries,
    /// which must match the current shapes.
    pub fn load_params<P: Params + ?Sized>(&self, prefix: &str, p: &mut P) -> Result<()> {
        for (name, t) in p.tensors_mut() {
            let src = self.tensor_shaped(&format!("{prefix}.{name}"), t.shape())?;
            t.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        };
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 {
            return Err(bad("file too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("digest mismatch; file is corrupted or was modified"));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("not a vicntm archive"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported archive version {version}")));
        }
        let mut archive = Archive::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            archive.meta.insert(k, v);
        }
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| bad("tensor shape overflows"))?;
            let raw = r.take(
                n.checked_mul(8)
                    .ok_or_else(|| bad("tensor shape overflows"))?,
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            archive
                .tensors
                .push((name, Matrix::from_vec(rows, cols, data)?));
        }
        if r.pos != body.len() {
            return Err(bad("trailing bytes after last tensor"));
        }
        Ok(archive)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| bad("truncated archive"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("invalid utf-8 in archive"))
    }
}
