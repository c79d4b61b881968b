//! Versioned little-endian parameter files.
//!
//! Layout:
//!
//! ```text
//! magic        4 bytes ("VMM1", "MEVT", ...)
//! version      u32
//! meta count   u32, then per entry: u32 key length, key bytes, u32 value
//! tensor count u32, then per tensor: u32 name length, name bytes, u32 rank, u32 dims...
//! payload      f32 values of every tensor, in table order
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Module;

pub const FORMAT_VERSION: u32 = 1;

/// Decoded file contents before they are matched against a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamFile {
    pub magic: [u8; 4],
    pub meta: Vec<(String, u32)>,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl ParamFile {
    pub fn meta(&self, key: &str) -> Option<u32> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    /// Copies tensors into `module`, checking names and shapes.
    pub fn load_into<M: Module>(&self, module: &mut M, path: &Path) -> Result<()> {
        let expected: Vec<(String, Vec<usize>)> = module
            .named_tensors()
            .into_iter()
            .map(|t| (t.name, t.shape))
            .collect();
        if expected.len() != self.tensors.len() {
            return Err(Error::format(
                "parameter",
                path,
                format!(
                    "expected {} tensors, file has {}",
                    expected.len(),
                    self.tensors.len()
                ),
            ));
        }
        for ((name, shape), (fname, fshape, _)) in expected.iter().zip(&self.tensors) {
            if name != fname || shape != fshape {
                return Err(Error::format(
                    "parameter",
                    path,
                    format!("tensor {fname} {fshape:?} does not match {name} {shape:?}"),
                ));
            }
        }
        let mut dst = Vec::new();
        module.tensors_mut(&mut dst);
        for (d, (_, _, values)) in dst.into_iter().zip(&self.tensors) {
            for (a, &b) in d.iter_mut().zip(values) {
                *a = b as f64;
            }
        }
        Ok(())
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

pub fn encode<M: Module>(magic: &[u8; 4], meta: &[(&str, u32)], module: &M) -> Vec<u8> {
    let tensors = module.named_tensors();
    let mut buf = Vec::new();
    buf.extend_from_slice(magic);
    put_u32(&mut buf, FORMAT_VERSION);
    put_u32(&mut buf, meta.len() as u32);
    for (k, v) in meta {
        put_str(&mut buf, k);
        put_u32(&mut buf, *v);
    }
    put_u32(&mut buf, tensors.len() as u32);
    for t in &tensors {
        put_str(&mut buf, &t.name);
        put_u32(&mut buf, t.shape.len() as u32);
        for &d in &t.shape {
            put_u32(&mut buf, d as u32);
        }
    }
    for t in &tensors {
        for &v in t.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format("parameter", self.path, "truncated file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let path = self.path;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::format("parameter", path, "non-UTF-8 name"))
    }
}

pub fn decode(bytes: &[u8], expected_magic: &[u8; 4], path: &Path) -> Result<ParamFile> {
    let mut r = Reader { bytes, pos: 0, path };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if &magic != expected_magic {
        return Err(Error::format(
            "parameter",
            path,
            format!(
                "magic {:?}, expected {:?}",
                String::from_utf8_lossy(&magic),
                String::from_utf8_lossy(expected_magic)
            ),
        ));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::format(
            "parameter",
            path,
            format!("unsupported version {version}"),
        ));
    }
    let n_meta = r.u32()?;
    let mut meta = Vec::new();
    for _ in 0..n_meta {
        let k = r.string()?;
        meta.push((k, r.u32()?));
    }
    let n_tensors = r.u32()?;
    let mut table = Vec::new();
    for _ in 0..n_tensors {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        table.push((name, shape));
    }
    let mut tensors = Vec::new();
    for (name, shape) in table {
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push((name, shape, values));
    }
    if r.pos != bytes.len() {
        return Err(Error::format("parameter", path, "trailing bytes"));
    }
    Ok(ParamFile {
        magic,
        meta,
        tensors,
    })
}

pub fn write<M: Module>(path: &Path, magic: &[u8; 4], meta: &[(&str, u32)], module: &M) -> Result<()> {
    std::fs::write(path, encode(magic, meta, module)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path, magic: &[u8; 4]) -> Result<ParamFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, magic, path)
}
