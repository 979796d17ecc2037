//! Flat weight container: `<stem>.bin` holds every tensor as 32-bit
//! little-endian floats back to back, `<stem>.json` maps names to shapes and
//! byte offsets.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::params::{ParamKind, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

pub const FORMAT: &str = "tfn-weights/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the `.bin` file.
    pub offset: usize,
    #[serde(default)]
    pub buffer: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub dtype: String,
    pub total_bytes: usize,
    pub tensors: Vec<Entry>,
}

impl Manifest {
    /// Parses and validates a manifest: known format, unique names, entries
    /// laid out contiguously inside `total_bytes`.
    pub fn parse(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text)?;
        if m.format != FORMAT || m.dtype != "f32le" {
            return Err(TensorError::Checkpoint(format!(
                "unsupported format {:?} / dtype {:?}",
                m.format, m.dtype
            )));
        }
        let mut seen = BTreeMap::new();
        let mut cursor = 0usize;
        for e in &m.tensors {
            if seen.insert(e.name.as_str(), ()).is_some() {
                return Err(TensorError::Checkpoint(format!("duplicate tensor `{}`", e.name)));
            }
            let bytes = e
                .shape
                .iter()
                .try_fold(4usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| TensorError::Checkpoint(format!("`{}`: shape overflows", e.name)))?;
            if e.offset != cursor {
                return Err(TensorError::Checkpoint(format!(
                    "`{}`: offset {} but expected {cursor}",
                    e.name, e.offset
                )));
            }
            cursor = cursor
                .checked_add(bytes)
                .ok_or_else(|| TensorError::Checkpoint("size overflows".into()))?;
        }
        if cursor != m.total_bytes {
            return Err(TensorError::Checkpoint(format!(
                "entries cover {cursor} bytes, manifest says {}",
                m.total_bytes
            )));
        }
        Ok(m)
    }
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

/// Writes every entry of `store` whose name starts with `prefix`.
pub fn save<T: Real>(store: &ParamStore<T>, stem: &Path, prefix: &str) -> Result<Manifest> {
    save_matching(store, stem, |name| name.starts_with(prefix))
}

/// Writes every entry of `store` whose name satisfies `keep`.
pub fn save_matching<T: Real>(store: &ParamStore<T>, stem: &Path, keep: impl Fn(&str) -> bool) -> Result<Manifest> {
    let mut bin = Vec::new();
    let mut tensors = Vec::new();
    for (_, p) in store.iter().filter(|(_, p)| keep(&p.name)) {
        tensors.push(Entry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset: bin.len(),
            buffer: p.kind == ParamKind::Buffer,
        });
        for v in p.value.data() {
            bin.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    let m = Manifest {
        format: FORMAT.into(),
        dtype: "f32le".into(),
        total_bytes: bin.len(),
        tensors,
    };
    let (bp, jp) = paths(stem);
    if let Some(dir) = bp.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&bp, &bin)?;
    fs::write(&jp, serde_json::to_string_pretty(&m)?)?;
    Ok(m)
}

/// Decodes a manifest and its payload into named tensors.
pub fn decode(manifest: &str, bin: &[u8]) -> Result<Vec<(Entry, Tensor<f32>)>> {
    let m = Manifest::parse(manifest)?;
    if bin.len() != m.total_bytes {
        return Err(TensorError::Checkpoint(format!(
            "payload is {} bytes, manifest says {}",
            bin.len(),
            m.total_bytes
        )));
    }
    m.tensors
        .into_iter()
        .map(|e| {
            let n: usize = e.shape.iter().product();
            let data = bin[e.offset..e.offset + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::new(&e.shape, data)?;
            Ok((e, t))
        })
        .collect()
}

pub fn read(stem: &Path) -> Result<Vec<(Entry, Tensor<f32>)>> {
    let (bp, jp) = paths(stem);
    decode(&fs::read_to_string(jp)?, &fs::read(bp)?)
}

/// Loads every tensor of the checkpoint into `store`, which must already
/// hold a same-shaped entry of the same name. Returns the number loaded.
pub fn load_into<T: Real>(store: &mut ParamStore<T>, stem: &Path) -> Result<usize> {
    let tensors = read(stem)?;
    for (e, t) in &tensors {
        let id = store.require(&e.name)?;
        if store.value(id).shape() != t.shape() {
            return Err(crate::error::shape_err("checkpoint::load_into", store.value(id).shape(), t.shape()));
        }
        *store.value_mut(id) = t.cast();
    }
    Ok(tensors.len())
}
