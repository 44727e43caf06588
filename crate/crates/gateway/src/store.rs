//! Content-addressed on-disk dataset store.
//!
//! ```text
//! <root>/datasets/<id>/bundle.json
//!                     dem.f32  dem.hdr  imagery.png
//!                     mesh.obj  mesh.stl
//!                     segmentation/<level>.bin  segmentation/<level>.txt
//!                     correction.png
//!                     submissions/<sid>/{mask.png, log.json, record.json}
//! <root>/tmp/
//! ```
//!
//! A dataset directory is staged under `tmp/` and renamed into place, so a
//! reader never sees a partial bundle. Later writes (extra levels, the
//! correction mask, submissions) replace single files by rename.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use floodmap_core::topo::TopologyBundle;
use serde::{Deserialize, Serialize};

use crate::error::{GatewayError, Result};

/// Summary of the stored mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSummary {
    pub vertices: usize,
    pub triangles: usize,
    pub max_error_bound: f64,
    pub budget_exhausted: bool,
}

/// Contents of `bundle.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    /// Elevation range before normalization.
    pub source_range: [f64; 2],
    pub degenerate: bool,
    pub thresholds: Vec<f64>,
    pub segment_counts: Vec<u32>,
    pub mesh_max_error: f64,
    pub mesh: MeshSummary,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

pub fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Ids are lowercase hex digests; anything else is refused before it can
/// reach a path.
pub fn check_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

pub struct Store {
    root: PathBuf,
    quota: Option<u64>,
    locks: Mutex<HashMap<String, Arc<RwLock<()>>>>,
    trees: Mutex<HashMap<String, Arc<TopologyBundle>>>,
    counter: AtomicU64,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("datasets"))?;
        fs::create_dir_all(root.join("tmp"))?;
        Ok(Self {
            root,
            quota: None,
            locks: Mutex::default(),
            trees: Mutex::default(),
            counter: AtomicU64::new(0),
        })
    }

    /// Caps the total bytes under the root; writes beyond it fail with
    /// `StorageFull`.
    pub fn with_quota(mut self, bytes: u64) -> Self {
        self.quota = Some(bytes);
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dataset_dir(&self, id: &str) -> PathBuf {
        self.root.join("datasets").join(id)
    }

    pub fn exists(&self, id: &str) -> bool {
        check_id(id) && self.dataset_dir(id).join("bundle.json").is_file()
    }

    /// Single-writer, many-reader guard for one dataset directory.
    pub fn lock(&self, id: &str) -> Arc<RwLock<()>> {
        self.locks.lock().unwrap().entry(id.to_string()).or_default().clone()
    }

    pub fn cached_tree(&self, id: &str) -> Option<Arc<TopologyBundle>> {
        self.trees.lock().unwrap().get(id).cloned()
    }

    pub fn cache_tree(&self, id: &str, tree: Arc<TopologyBundle>) {
        self.trees.lock().unwrap().insert(id.to_string(), tree);
    }

    pub fn read_meta(&self, id: &str) -> Result<DatasetMeta> {
        if !self.exists(id) {
            return Err(GatewayError::UnknownDataset(id.to_string()));
        }
        let bytes = fs::read(self.dataset_dir(id).join("bundle.json"))?;
        serde_json::from_slice(&bytes).map_err(|e| GatewayError::Io(std::io::Error::other(e)))
    }

    pub fn write_meta(&self, meta: &DatasetMeta) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(meta).expect("metadata serializes");
        self.write_file(&self.dataset_dir(&meta.id).join("bundle.json"), &bytes)
    }

    /// Reads a file inside a dataset directory.
    pub fn read(&self, id: &str, rel: &str) -> Result<Vec<u8>> {
        if !self.exists(id) {
            return Err(GatewayError::UnknownDataset(id.to_string()));
        }
        Ok(fs::read(self.dataset_dir(id).join(rel))?)
    }

    /// Replaces `path` atomically.
    pub fn write_file(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        self.check_quota(bytes.len() as u64)?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let staged = self.staging_path();
        fs::write(&staged, bytes)?;
        fs::rename(&staged, path)?;
        Ok(())
    }

    /// Writes a new dataset directory from `(relative path, bytes)` pairs.
    /// Returns false when the dataset already existed.
    pub fn commit_dataset(&self, id: &str, files: &[(String, Vec<u8>)]) -> Result<bool> {
        if self.exists(id) {
            return Ok(false);
        }
        self.commit_dir(&self.dataset_dir(id), files)
    }

    /// Stages a directory and renames it to `target`; false if `target`
    /// already exists.
    pub fn commit_dir(&self, target: &Path, files: &[(String, Vec<u8>)]) -> Result<bool> {
        if target.exists() {
            return Ok(false);
        }
        self.check_quota(files.iter().map(|(_, b)| b.len() as u64).sum())?;
        let staged = self.staging_path();
        for (rel, bytes) in files {
            let path = staged.join(rel);
            fs::create_dir_all(path.parent().expect("relative paths have a parent"))?;
            fs::write(path, bytes)?;
        }
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent)?;
        }
        match fs::rename(&staged, target) {
            Ok(()) => Ok(true),
            Err(_) if target.exists() => {
                fs::remove_dir_all(&staged)?;
                Ok(false)
            }
            Err(e) => {
                let _ = fs::remove_dir_all(&staged);
                Err(e.into())
            }
        }
    }

    /// Directory names under `rel`, sorted.
    pub fn list(&self, id: &str, rel: &str) -> Result<Vec<String>> {
        let dir = self.dataset_dir(id).join(rel);
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut names = Vec::new();
        for entry in fs::read_dir(dir)? {
            names.push(entry?.file_name().to_string_lossy().into_owned());
        }
        names.sort();
        Ok(names)
    }

    fn staging_path(&self) -> PathBuf {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        self.root.join("tmp").join(format!("{}-{n}", std::process::id()))
    }

    fn check_quota(&self, extra: u64) -> Result<()> {
        let Some(quota) = self.quota else { return Ok(()) };
        let used = dir_size(&self.root)?;
        if used + extra > quota {
            return Err(GatewayError::StorageFull(format!("{used} + {extra} bytes exceeds quota of {quota}")));
        }
        Ok(())
    }
}

fn dir_size(path: &Path) -> std::io::Result<u64> {
    let mut total = 0;
    for entry in fs::read_dir(path)? {
        let entry = entry?;
        let meta = entry.metadata()?;
        total += if meta.is_dir() { dir_size(&entry.path())? } else { meta.len() };
    }
    Ok(total)
}
