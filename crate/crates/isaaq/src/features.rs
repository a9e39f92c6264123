//! Precomputed diagram features: raw little-endian `f32` vectors plus a
//! manifest declaring their length and the region boxes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use isaaq_core::vision::{BBox, RoI, RoISet};
use serde::{Deserialize, Serialize};

use crate::dataset::{read_json, write_json};
use crate::error::{io, Error, Result};

pub const MANIFEST: &str = "manifest.json";

pub fn write_f32(path: &Path, values: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    fs::write(path, bytes).map_err(io(path))
}

pub fn read_f32(path: &Path, dim: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(io(path))?;
    if bytes.len() != dim * 4 {
        return Err(Error::Format {
            path: path.into(),
            reason: format!("expected {dim} float32 values, found {} bytes", bytes.len()),
        });
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEntry {
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub featurizer: String,
    pub dim: usize,
    pub source: String,
    pub max_rois: usize,
    pub diagrams: BTreeMap<String, Vec<RegionEntry>>,
}

/// `features/` under the cache directory.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    pub dir: PathBuf,
    pub manifest: FeatureManifest,
}

impl FeatureStore {
    pub fn create(dir: &Path, manifest: FeatureManifest) -> Result<Self> {
        fs::create_dir_all(dir).map_err(io(dir))?;
        Ok(Self { dir: dir.into(), manifest })
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Err(Error::MissingCache { what: "diagram features".into(), path, command: "features".into() });
        }
        Ok(Self { dir: dir.into(), manifest: read_json(&path)? })
    }

    pub fn global_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.f32"))
    }

    pub fn region_path(&self, id: &str, k: usize) -> PathBuf {
        self.dir.join(format!("{id}.{k}.f32"))
    }

    /// Stores the whole-image feature and every region of one diagram.
    pub fn put(&mut self, global: &[f64], rois: &RoISet) -> Result<()> {
        let id = &rois.diagram_id;
        write_f32(&self.global_path(id), global)?;
        for (k, r) in rois.rois.iter().enumerate() {
            write_f32(&self.region_path(id, k), &r.feature)?;
        }
        let entries = rois.rois.iter().map(|r| RegionEntry { bbox: r.bbox, confidence: r.confidence }).collect();
        self.manifest.diagrams.insert(id.clone(), entries);
        Ok(())
    }

    pub fn save_manifest(&self) -> Result<()> {
        write_json(&self.dir.join(MANIFEST), &self.manifest)
    }

    fn entries(&self, id: &str) -> Result<&[RegionEntry]> {
        self.manifest.diagrams.get(id).map(Vec::as_slice).ok_or_else(|| Error::MissingCache {
            what: format!("features for diagram {id}"),
            path: self.dir.join(MANIFEST),
            command: "features".into(),
        })
    }

    pub fn rois(&self, id: &str) -> Result<RoISet> {
        let rois = self
            .entries(id)?
            .iter()
            .enumerate()
            .map(|(k, e)| {
                Ok(RoI { bbox: e.bbox, confidence: e.confidence, feature: read_f32(&self.region_path(id, k), self.manifest.dim)? })
            })
            .collect::<Result<_>>()?;
        Ok(RoISet { diagram_id: id.into(), rois })
    }

    /// The whole-image region of a diagram.
    pub fn global(&self, id: &str) -> Result<RoI> {
        self.entries(id)?;
        Ok(RoI { bbox: BBox::WHOLE, confidence: 1.0, feature: read_f32(&self.global_path(id), self.manifest.dim)? })
    }
}
