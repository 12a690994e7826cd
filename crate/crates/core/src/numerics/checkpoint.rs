//! Versioned binary container for parameter and optimizer tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "HKGDCKPT"
//! version      u32      currently 1
//! header_len   u32
//! header       header_len bytes of UTF-8 JSON (model dims, vocab sizes, schedule state)
//! entry_count  u32
//! entry*       name_len u32, name bytes, section u8, decay u8, dtype u8,
//!              rows u32, cols u32, rows*cols values (f32 = 4 bytes, f64 = 8 bytes)
//! digest       32 bytes SHA-256 of every preceding byte
//! ```
//!
//! Section is 0 for parameters, 1 and 2 for the optimizer's first and second moments.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::io::write_atomic;
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"HKGDCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Section {
    Param = 0,
    AdamFirst = 1,
    AdamSecond = 2,
}

impl Section {
    fn from_byte(b: u8) -> Result<Section> {
        match b {
            0 => Ok(Section::Param),
            1 => Ok(Section::AdamFirst),
            2 => Ok(Section::AdamSecond),
            _ => Err(Error::Checkpoint(format!("unknown section {b}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Entry<T> {
    pub name: String,
    pub section: Section,
    pub decay_eligible: bool,
    pub tensor: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub header: serde_json::Value,
    pub entries: Vec<Entry<T>>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let header = serde_json::to_vec(&self.header)?;
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.section as u8);
            out.push(e.decay_eligible as u8);
            out.push(T::DTYPE);
            out.extend_from_slice(&(e.tensor.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(e.tensor.cols() as u32).to_le_bytes());
            T::to_le_bytes_vec(e.tensor.data(), &mut out);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint<T>> {
        if bytes.len() < MAGIC.len() + 32 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint("digest mismatch, file is corrupt".into()));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let header_len = r.u32()? as usize;
        let header = serde_json::from_slice(r.take(header_len)?)?;
        let count = r.u32()? as usize;
        let width = if T::DTYPE == 0 { 4 } else { 8 };
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
            let section = Section::from_byte(r.u8()?)?;
            let decay_eligible = r.u8()? != 0;
            let dtype = r.u8()?;
            if dtype != T::DTYPE {
                return Err(Error::Checkpoint(format!("entry {name} has dtype {dtype}, expected {}", T::DTYPE)));
            }
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let data = T::from_le_slice(r.take(rows * cols * width)?);
            entries.push(Entry {
                name,
                section,
                decay_eligible,
                tensor: Tensor::from_vec(rows, cols, data)?,
            });
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes after entries".into()));
        }
        Ok(Checkpoint { header, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Checkpoint<T>> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    pub fn section(&self, section: Section) -> impl Iterator<Item = &Entry<T>> {
        self.entries.iter().filter(move |e| e.section == section)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
