//! Checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "DTCK" | version u32 | header_len u64 | header (JSON, header_len bytes)
//!        | one DTPT tensor record per header entry, in header order
//! ```
//!
//! The header holds the model config, the step counter and the list of
//! `{name, shape}` entries. Parameters come first in manifest order; when
//! optimizer moments are stored they follow as `adam.m.<name>` and then
//! `adam.v.<name>`.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dit::config::ModelConfig;
use crate::dit::params::DitParams;
use crate::error::{Error, Result};
use crate::media::{decode_tensor, encode_tensor};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DTCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    pub params: DitParams<f32>,
    /// AdamW first and second moments, when saved by training.
    pub moments: Option<(DitParams<f32>, DitParams<f32>)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: u64,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    fn entries(&self) -> Vec<(String, &Tensor<f32>)> {
        let names: Vec<String> = self.config.manifest().into_iter().map(|(n, _)| n).collect();
        let mut out: Vec<(String, &Tensor<f32>)> = names.iter().cloned().zip(self.params.tensors()).collect();
        if let Some((m, v)) = &self.moments {
            out.extend(names.iter().map(|n| format!("adam.m.{n}")).zip(m.tensors()));
            out.extend(names.iter().map(|n| format!("adam.v.{n}")).zip(v.tensors()));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let entries = self.entries();
        let header = Header {
            config: self.config.clone(),
            step: self.step,
            tensors: entries
                .iter()
                .map(|(name, t)| Entry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in entries {
            encode_tensor(t, &mut out);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(origin, reason);
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic, expected \"DTCK\"".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes
            .get(16..16usize.saturating_add(len))
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| bad(format!("header: {e}")))?;
        header.config.validate()?;

        let manifest = header.config.manifest();
        let mut seen = HashSet::new();
        for e in &header.tensors {
            if !seen.insert(e.name.as_str()) {
                return Err(bad(format!("parameter {} appears twice", e.name)));
            }
        }
        let with_moments = match header.tensors.len() {
            n if n == manifest.len() => false,
            n if n == 3 * manifest.len() => true,
            n => return Err(bad(format!("{n} tensors listed, manifest has {}", manifest.len()))),
        };
        let mut pos = 16 + len;
        let mut read_set = |prefix: &str, offset: usize| -> Result<DitParams<f32>> {
            let mut p = DitParams::<f32>::zeros(&header.config)?;
            for (i, ((name, shape), slot)) in manifest.iter().zip(p.tensors_mut()).enumerate() {
                let entry = &header.tensors[offset + i];
                let want = format!("{prefix}{name}");
                if entry.name != want || &entry.shape != shape {
                    return Err(bad(format!(
                        "expected {want} {shape:?}, found {} {:?}",
                        entry.name, entry.shape
                    )));
                }
                let t = decode_tensor::<f32>(bytes, &mut pos, origin)?;
                if t.shape() != shape.as_slice() {
                    return Err(bad(format!("{want} stored with shape {:?}", t.shape())));
                }
                *slot = t;
            }
            Ok(p)
        };
        let params = read_set("", 0)?;
        let moments = if with_moments {
            let m = read_set("adam.m.", manifest.len())?;
            let v = read_set("adam.v.", 2 * manifest.len())?;
            Some((m, v))
        } else {
            None
        };
        if pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Checkpoint {
            config: header.config,
            step: header.step,
            params,
            moments,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
