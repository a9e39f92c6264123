//! Flat `f32` weight files with a JSON manifest, and vocabulary files.

use std::fs;
use std::path::{Path, PathBuf};

use isaaq_core::params::Parameters;
use isaaq_core::tensor::Matrix;
use isaaq_core::tokenizer::Vocab;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_json, write_json};
use crate::error::{io, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Byte offset into the binary file.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightManifest {
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
}

/// `weights.bin` → `weights.json`.
pub fn manifest_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

pub fn save_tensors(bin: &Path, tensors: &[(String, Matrix)]) -> Result<()> {
    let mut bytes = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, m) in tensors {
        entries.push(TensorEntry { name: name.clone(), shape: [m.rows(), m.cols()], offset: bytes.len() });
        bytes.extend(m.data().iter().flat_map(|&v| (v as f32).to_le_bytes()));
    }
    if let Some(dir) = bin.parent() {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    fs::write(bin, bytes).map_err(io(bin))?;
    write_json(&manifest_path(bin), &WeightManifest { dtype: "f32le".into(), tensors: entries })
}

pub fn save_weights(bin: &Path, params: &dyn Parameters) -> Result<()> {
    save_tensors(bin, &params.named_tensors())
}

pub fn load_tensors(bin: &Path) -> Result<Vec<(String, Matrix)>> {
    let manifest: WeightManifest = read_json(&manifest_path(bin))?;
    if manifest.dtype != "f32le" {
        return Err(Error::Format { path: bin.into(), reason: format!("unsupported dtype {}", manifest.dtype) });
    }
    let bytes = fs::read(bin).map_err(io(bin))?;
    manifest
        .tensors
        .into_iter()
        .map(|t| {
            let len = t.shape[0] * t.shape[1] * 4;
            let chunk = bytes.get(t.offset..t.offset + len).ok_or_else(|| Error::Format {
                path: bin.into(),
                reason: format!(
                    "truncated: tensor {} needs bytes {}..{} but the file has {}",
                    t.name,
                    t.offset,
                    t.offset + len,
                    bytes.len()
                ),
            })?;
            let data = chunk.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
            Ok((t.name, Matrix::from_vec(t.shape[0], t.shape[1], data)))
        })
        .collect()
}

/// Loads a weight file into `params`, failing with every mismatched tensor.
pub fn load_weights(bin: &Path, params: &mut dyn Parameters) -> Result<()> {
    let tensors = load_tensors(bin)?;
    Ok(params.load_named(&tensors)?)
}

pub fn save_vocab(path: &Path, vocab: &Vocab) -> Result<()> {
    fs::write(path, vocab.to_text()).map_err(io(path))
}

pub fn load_vocab(path: &Path) -> Result<Vocab> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    Ok(Vocab::parse(&text)?)
}
