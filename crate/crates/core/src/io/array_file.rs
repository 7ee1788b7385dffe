//! Chunked binary container holding named arrays.
//!
//! One format backs both per-utterance feature files and model checkpoints.
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"SVCA"
//! u32     format version (1)
//! u32     chunk count
//! chunk*  u32 name length, name (utf-8),
//!         u8 dtype (0 = f32, 1 = f64, 2 = raw bytes),
//!         u8 ndim, u64 dim[ndim], payload
//! ```
//!
//! Raw-byte chunks use ndim = 1 with dim[0] = byte length. The reader
//! validates every length against the remaining input before allocating.

use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SVCA";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Chunk {
    F32 { shape: Vec<usize>, data: Vec<f32> },
    F64 { shape: Vec<usize>, data: Vec<f64> },
    Bytes(Vec<u8>),
}

#[derive(Debug, Clone, Default)]
pub struct ArrayFile {
    entries: Vec<(String, Chunk)>,
}

impl ArrayFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_f32(&mut self, name: &str, shape: &[usize], data: Vec<f32>) {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries
            .push((name.to_string(), Chunk::F32 { shape: shape.to_vec(), data }));
    }

    pub fn push_f64(&mut self, name: &str, shape: &[usize], data: Vec<f64>) {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries
            .push((name.to_string(), Chunk::F64 { shape: shape.to_vec(), data }));
    }

    pub fn push_bytes(&mut self, name: &str, data: Vec<u8>) {
        self.entries.push((name.to_string(), Chunk::Bytes(data)));
    }

    pub fn push_array_f32(&mut self, name: &str, arr: &ArrayD<f64>) {
        let data: Vec<f32> = arr.iter().map(|&v| v as f32).collect();
        self.push_f32(name, arr.shape(), data);
    }

    pub fn push_array_f64(&mut self, name: &str, arr: &ArrayD<f64>) {
        let data: Vec<f64> = arr.iter().copied().collect();
        self.push_f64(name, arr.shape(), data);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Chunk> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }

    pub fn get_bytes(&self, name: &str) -> Option<&[u8]> {
        match self.get(name)? {
            Chunk::Bytes(b) => Some(b),
            _ => None,
        }
    }

    /// Fetch an f32 chunk widened to f64.
    pub fn get_array_f32(&self, name: &str) -> Option<ArrayD<f64>> {
        match self.get(name)? {
            Chunk::F32 { shape, data } => Some(
                ArrayD::from_shape_vec(IxDyn(shape), data.iter().map(|&v| v as f64).collect())
                    .unwrap(),
            ),
            _ => None,
        }
    }

    pub fn get_array_f64(&self, name: &str) -> Option<ArrayD<f64>> {
        match self.get(name)? {
            Chunk::F64 { shape, data } => {
                Some(ArrayD::from_shape_vec(IxDyn(shape), data.clone()).unwrap())
            }
            _ => None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, chunk) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match chunk {
                Chunk::F32 { shape, data } => {
                    out.push(0);
                    out.push(shape.len() as u8);
                    for &d in shape {
                        out.extend_from_slice(&(d as u64).to_le_bytes());
                    }
                    for v in data {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Chunk::F64 { shape, data } => {
                    out.push(1);
                    out.push(shape.len() as u8);
                    for &d in shape {
                        out.extend_from_slice(&(d as u64).to_le_bytes());
                    }
                    for v in data {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Chunk::Bytes(data) => {
                    out.push(2);
                    out.push(1);
                    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
                    out.extend_from_slice(data);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        struct Cursor<'a> {
            b: &'a [u8],
            off: usize,
        }
        impl<'a> Cursor<'a> {
            fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
                let end = self.off.checked_add(n).ok_or("length overflow")?;
                if end > self.b.len() {
                    return Err(format!(
                        "truncated: need {} bytes at offset {}, have {}",
                        n,
                        self.off,
                        self.b.len() - self.off
                    ));
                }
                let s = &self.b[self.off..end];
                self.off = end;
                Ok(s)
            }
            fn u8(&mut self) -> std::result::Result<u8, String> {
                Ok(self.take(1)?[0])
            }
            fn u32(&mut self) -> std::result::Result<u32, String> {
                let s = self.take(4)?;
                Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
            }
            fn u64(&mut self) -> std::result::Result<u64, String> {
                let s = self.take(8)?;
                Ok(u64::from_le_bytes(s.try_into().unwrap()))
            }
        }

        let mut cur = Cursor { b: bytes, off: 0 };
        if cur.take(4)? != MAGIC {
            return Err("bad magic".into());
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(format!("unsupported container version {version}"));
        }
        let n_chunks = cur.u32()? as usize;
        let mut entries = Vec::new();
        for _ in 0..n_chunks {
            let name_len = cur.u32()? as usize;
            if name_len > 4096 {
                return Err(format!("chunk name length {name_len} unreasonable"));
            }
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| "chunk name is not utf-8".to_string())?
                .to_string();
            if entries.iter().any(|(n, _)| *n == name) {
                return Err(format!("duplicate chunk name {name}"));
            }
            let dtype = cur.u8()?;
            let ndim = cur.u8()? as usize;
            if ndim > 8 {
                return Err(format!("ndim {ndim} unreasonable"));
            }
            let mut shape = Vec::with_capacity(ndim);
            let mut count: usize = 1;
            for _ in 0..ndim {
                let d = cur.u64()?;
                let d: usize = d.try_into().map_err(|_| "dimension overflow")?;
                count = count.checked_mul(d).ok_or("element count overflow")?;
                shape.push(d);
            }
            let elem_size = match dtype {
                0 => 4,
                1 => 8,
                2 => 1,
                other => return Err(format!("unknown dtype {other}")),
            };
            let payload_len = count.checked_mul(elem_size).ok_or("payload overflow")?;
            let payload = cur.take(payload_len)?;
            let chunk = match dtype {
                0 => Chunk::F32 {
                    shape,
                    data: payload
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                },
                1 => Chunk::F64 {
                    shape,
                    data: payload
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                },
                2 => {
                    if ndim != 1 {
                        return Err("byte chunk must be 1-d".into());
                    }
                    Chunk::Bytes(payload.to_vec())
                }
                _ => unreachable!(),
            };
            entries.push((name, chunk));
        }
        if cur.off != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - cur.off));
        }
        Ok(ArrayFile { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::format(path, reason))
    }
}
