//! Binary checkpoint container.
//!
//! Layout, integers little-endian:
//!
//! ```text
//! magic      8 bytes  "VTDCKPT1"
//! header_len u64
//! header     JSON: {"dtype": "f32", "meta": {...}, "tensors": [{"name": .., "shape": [..]}, ..]}
//! payload    each tensor's values, little-endian, in header order
//! ```
//!
//! `meta` is free-form (configs, optimizer step, random-stream position).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Parameterized;
use crate::numerics::Scalar;

pub const MAGIC: &[u8; 8] = b"VTDCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T: Scalar> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor<T>>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<T>) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            shape: shape.to_vec(),
            data,
        });
    }

    /// Appends every parameter (including buffers) of `model`, in visiting order.
    pub fn push_params(&mut self, model: &dyn Parameterized<T>) {
        model.visit_params(&mut |p| self.push(p.name.clone(), p.value.shape(), p.value.data().to_vec()));
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Overwrites every parameter of `model` from the tensor of the same
    /// name. Missing names and shape mismatches are errors.
    pub fn load_params(&self, model: &mut dyn Parameterized<T>) -> Result<()> {
        let mut err = None;
        model.visit_params_mut(&mut |p| {
            if err.is_some() {
                return;
            }
            match self.get(&p.name) {
                None => err = Some(Error::invalid(format!("checkpoint has no tensor {}", p.name))),
                Some(t) if t.shape != p.value.shape() => {
                    err = Some(Error::invalid(format!(
                        "{}: checkpoint shape {:?}, model shape {:?}",
                        p.name,
                        t.shape,
                        p.value.shape()
                    )))
                }
                Some(t) => {
                    if let Err(e) = p.set(t.data.clone()) {
                        err = Some(e);
                    }
                }
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            dtype: T::DTYPE.to_string(),
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Entry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::invalid(format!("checkpoint header: {e}")))?;
        let mut out = Vec::with_capacity(16 + json.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.tensors {
            if t.data.len() != t.shape.iter().product::<usize>() {
                return Err(Error::invalid(format!(
                    "{}: data does not match shape {:?}",
                    t.name, t.shape
                )));
            }
            out.extend_from_slice(&T::to_le_bytes_vec(&t.data));
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::parse("checkpoint", m);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16usize.saturating_add(len))
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
        if header.dtype != T::DTYPE {
            return Err(bad(format!("stored as {}, requested {}", header.dtype, T::DTYPE)));
        }
        let mut pos = 16 + len;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let end = pos + n * T::BYTES;
            let raw = bytes
                .get(pos..end)
                .ok_or_else(|| bad(format!("truncated payload for {}", e.name)))?;
            tensors.push(NamedTensor {
                name: e.name,
                shape: e.shape,
                data: raw.chunks_exact(T::BYTES).map(T::from_le_chunk).collect(),
            });
            pos = end;
        }
        if pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
