//! Versioned binary parameter files.
//!
//! Layout: 8-byte magic, u32 version, u32 manifest length, a JSON manifest
//! naming each tensor and its shape, then all tensor data as little-endian f64
//! in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"EMOARPRM";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    kind: String,
    #[serde(default)]
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Named f64 tensors plus free-form metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamFile {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(TensorEntry, Vec<f64>)>,
}

impl ParamFile {
    pub fn new(kind: &str, meta: serde_json::Value) -> Self {
        ParamFile { kind: kind.to_owned(), meta, tensors: Vec::new() }
    }

    pub fn push(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<()> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ParamFile(format!("tensor {name}: shape {shape:?} does not hold {} values", data.len())));
        }
        self.tensors.push((TensorEntry { name: name.to_owned(), shape: shape.to_vec() }, data));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<(&[usize], &[f64])> {
        self.tensors
            .iter()
            .find(|(e, _)| e.name == name)
            .map(|(e, d)| (e.shape.as_slice(), d.as_slice()))
            .ok_or_else(|| Error::ParamFile(format!("missing tensor {name}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = Manifest {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self.tensors.iter().map(|(e, _)| e.clone()).collect(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let data_len: usize = self.tensors.iter().map(|(_, d)| d.len()).sum();
        let mut out = Vec::with_capacity(16 + json.len() + data_len * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, d) in &self.tensors {
            for x in d {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::ParamFile("bad magic header".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::ParamFile(format!("unsupported version {version}")));
        }
        let mlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let json = bytes.get(16..16 + mlen).ok_or_else(|| Error::ParamFile("truncated manifest".into()))?;
        let manifest: Manifest = serde_json::from_slice(json)?;
        let mut rest = &bytes[16 + mlen..];
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for entry in manifest.tensors {
            let n: usize = entry.shape.iter().product();
            if rest.len() < n * 8 {
                return Err(Error::ParamFile(format!("truncated data for tensor {}", entry.name)));
            }
            let data: Vec<f64> = rest[..n * 8].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            if data.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("parameter data"));
            }
            rest = &rest[n * 8..];
            tensors.push((entry, data));
        }
        if !rest.is_empty() {
            return Err(Error::ParamFile(format!("{} trailing bytes", rest.len())));
        }
        Ok(ParamFile { kind: manifest.kind, meta: manifest.meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Packs several files into one of kind `bundle`, tensor names prefixed `part/`.
    pub fn bundle(parts: &[(&str, &ParamFile)]) -> Self {
        let mut meta = serde_json::Map::new();
        let mut tensors = Vec::new();
        for (name, pf) in parts {
            meta.insert((*name).to_owned(), serde_json::json!({ "kind": pf.kind, "meta": pf.meta }));
            for (e, d) in &pf.tensors {
                tensors.push((TensorEntry { name: format!("{name}/{}", e.name), shape: e.shape.clone() }, d.clone()));
            }
        }
        ParamFile { kind: "bundle".into(), meta: serde_json::Value::Object(meta), tensors }
    }

    /// The named part of a bundle.
    pub fn part(&self, name: &str) -> Result<Option<ParamFile>> {
        if self.kind != "bundle" {
            return Err(Error::ParamFile(format!("expected a bundle, found {:?}", self.kind)));
        }
        let Some(head) = self.meta.get(name) else { return Ok(None) };
        let kind = head["kind"].as_str().ok_or_else(|| Error::ParamFile(format!("part {name} has no kind")))?;
        let prefix = format!("{name}/");
        let tensors = self
            .tensors
            .iter()
            .filter_map(|(e, d)| {
                e.name.strip_prefix(&prefix).map(|n| (TensorEntry { name: n.to_owned(), shape: e.shape.clone() }, d.clone()))
            })
            .collect();
        Ok(Some(ParamFile { kind: kind.to_owned(), meta: head["meta"].clone(), tensors }))
    }
}
