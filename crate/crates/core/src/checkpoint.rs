//! Self-describing binary container for model weights and training state.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header (kind, free-form metadata, tensor table), then every tensor as
//! little-endian `f32` in table order.

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use skullcut_nn::{ParamSet, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SKULLCK\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(serde::Serialize, serde::Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: serde_json::Value,
    tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self { kind: kind.into(), meta, tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.tensors.push((name.into(), t));
    }

    /// Stores every tensor of `params` under `prefix/<name>`.
    pub fn push_params(&mut self, prefix: &str, params: &ParamSet<f32>) {
        for (name, t) in params.names().iter().zip(params.tensors()) {
            self.push(format!("{prefix}/{name}"), t.clone());
        }
    }

    /// Stores a tensor list under `prefix/<index>`.
    pub fn push_list(&mut self, prefix: &str, tensors: &[Tensor<f32>]) {
        for (i, t) in tensors.iter().enumerate() {
            self.push(format!("{prefix}/{i}"), t.clone());
        }
    }

    /// Tensors whose name starts with `prefix/`, in stored order.
    pub fn group(&self, prefix: &str) -> Vec<Tensor<f32>> {
        let p = format!("{prefix}/");
        self.tensors.iter().filter(|(n, _)| n.starts_with(&p)).map(|(_, t)| t.clone()).collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    /// Writes to a temporary sibling and renames, so readers never see a partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self.tensors.iter().map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint { path: path.into(), detail: e.to_string() })?;
        let payload: usize = self.tensors.iter().map(|(_, t)| t.len()).sum();
        let mut bytes = Vec::with_capacity(20 + json.len() + 4 * payload);
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            let start = bytes.len();
            bytes.resize(start + 4 * t.len(), 0);
            LittleEndian::write_f32_into(t.data(), &mut bytes[start..]);
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let corrupt = |detail: String| Error::Checkpoint { path: path.into(), detail };
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file".into()));
        }
        let version = LittleEndian::read_u32(&bytes[8..12]);
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        let hlen = LittleEndian::read_u64(&bytes[12..20]) as usize;
        let json = bytes.get(20..20 + hlen).ok_or_else(|| corrupt("truncated header".into()))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| corrupt(format!("header: {e}")))?;
        let mut off = 20 + hlen;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let raw = bytes.get(off..off + 4 * n).ok_or_else(|| corrupt(format!("truncated tensor {}", entry.name)))?;
            let mut data = vec![0f32; n];
            LittleEndian::read_f32_into(raw, &mut data);
            off += 4 * n;
            tensors.push((entry.name, Tensor::from_vec(&entry.shape, data).map_err(|e| corrupt(e.to_string()))?));
        }
        if off != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - off)));
        }
        Ok(Self { kind: header.kind, meta: header.meta, tensors })
    }

    /// Fails unless the stored kind is `kind`.
    pub fn expect_kind(&self, kind: &str, path: &Path) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::Checkpoint { path: path.into(), detail: format!("holds a `{}` model, expected `{kind}`", self.kind) })
        }
    }
}
