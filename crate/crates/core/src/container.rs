//! Versioned binary tensor container.
//!
//! Layout: 8-byte magic `GRLTENS\0`, `u32` version, `u32` reserved,
//! `u64` header length, a JSON header, then every tensor's `f64` values
//! little-endian in header order. Used for checkpoints, dataset archives,
//! feature matrices and raw intermediate images.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GRLTENS\0";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorContainer {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

fn truncated(offset: usize, what: &str) -> Error {
    Error::Parse {
        offset,
        message: format!("container truncated while reading {what}"),
    }
}

impl TensorContainer {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        TensorContainer {
            kind: kind.into(),
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(Tensor {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn take(&mut self, name: &str) -> Result<Tensor> {
        let pos = self
            .tensors
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::invalid(format!("container has no tensor {name:?}")))?;
        Ok(self.tensors.remove(pos))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let body: usize = self.tensors.iter().map(|t| t.data.len() * 8).sum();
        let mut out = Vec::with_capacity(24 + header.len() + body);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 24 {
            return Err(truncated(bytes.len(), "preamble"));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Parse {
                offset: 0,
                message: "not a tensor container".into(),
            });
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CONTAINER_VERSION {
            return Err(Error::Parse {
                offset: 8,
                message: format!("unsupported container version {version}"),
            });
        }
        let header_len = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let header_end = 24usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| truncated(bytes.len(), "header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[24..header_end]).map_err(|e| Error::Parse {
                offset: 24 + e.column(),
                message: e.to_string(),
            })?;
        let mut offset = header_end;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let end = offset
                .checked_add(n * 8)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| truncated(bytes.len(), &entry.name))?;
            let data = bytes[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Tensor {
                name: entry.name,
                shape: entry.shape,
                data,
            });
            offset = end;
        }
        if offset != bytes.len() {
            return Err(Error::Parse {
                offset,
                message: "trailing bytes after last tensor".into(),
            });
        }
        Ok(TensorContainer {
            kind: header.kind,
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        TensorContainer::from_bytes(&bytes)
    }
}
