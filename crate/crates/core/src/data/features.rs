//! Binary feature containers.
//!
//! Frames (`SFH1`): magic, u32 LE `T`, u32 LE `D`, then `T x D` f32 LE.
//! Embeddings (`SFE1`): magic, then records of u32 LE id length, UTF-8 id,
//! u32 LE `L`, u32 LE `E`, `L x E` f32 LE, until end of file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkernel::Tensor;

const FRAMES_MAGIC: &[u8; 4] = b"SFH1";
const EMBED_MAGIC: &[u8; 4] = b"SFE1";

fn push_matrix(out: &mut Vec<u8>, m: &Tensor) {
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::corrupt(self.path, format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn matrix(&mut self) -> Result<Tensor> {
        let rows = self.u32()?;
        let cols = self.u32()?;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::corrupt(self.path, "matrix size overflow"))?;
        let raw = self.take(n)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Tensor::from_vec(&[rows, cols], data)
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_frames(path: &Path, frames: &Tensor) -> Result<()> {
    let mut out = FRAMES_MAGIC.to_vec();
    push_matrix(&mut out, frames);
    write(path, &out)
}

pub fn read_frames(path: &Path) -> Result<Tensor> {
    let bytes = read(path)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path };
    if cur.take(4)? != FRAMES_MAGIC {
        return Err(Error::corrupt(path, "missing SFH1 magic"));
    }
    let m = cur.matrix()?;
    if !cur.done() {
        return Err(Error::corrupt(path, "trailing bytes"));
    }
    Ok(m)
}

pub fn write_embeddings<'a>(path: &Path, records: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
    let mut out = EMBED_MAGIC.to_vec();
    for (id, z) in records {
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        push_matrix(&mut out, z);
    }
    write(path, &out)
}

pub fn read_embeddings(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let bytes = read(path)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path };
    if cur.take(4)? != EMBED_MAGIC {
        return Err(Error::corrupt(path, "missing SFE1 magic"));
    }
    let mut out = BTreeMap::new();
    let mut width = None;
    while !cur.done() {
        let n = cur.u32()?;
        let id = std::str::from_utf8(cur.take(n)?)
            .map_err(|_| Error::corrupt(path, "record id is not UTF-8"))?
            .to_string();
        let z = cur.matrix()?;
        if *width.get_or_insert(z.cols()) != z.cols() {
            return Err(Error::Data(format!(
                "{}: embedding width changes at record `{id}`",
                path.display()
            )));
        }
        if out.insert(id.clone(), z).is_some() {
            return Err(Error::Data(format!("{}: duplicate record `{id}`", path.display())));
        }
    }
    Ok(out)
}
