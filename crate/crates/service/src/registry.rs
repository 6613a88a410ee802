use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sparseemg::dataset::{load_manifest, DatasetManifest, GestureDef};

use crate::ServiceError;

/// Datasets found under the data directory, keyed by directory name.
/// Read-only once built.
#[derive(Debug, Default)]
pub struct Registry {
    datasets: BTreeMap<String, Entry>,
}

#[derive(Debug)]
struct Entry {
    root: PathBuf,
    manifest: DatasetManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub name: String,
    pub title: String,
    pub channel_count: usize,
    pub gesture_count: usize,
    pub sampling_rate_hz: f64,
    pub electrode_diameter_mm: f64,
    pub users: Vec<String>,
    pub sessions_per_user: u32,
    pub gestures: Vec<GestureDef>,
}

impl Registry {
    /// Loads every `<dir>/<name>/manifest.json`. Directories without a
    /// manifest are skipped; an invalid manifest is an error.
    pub fn scan(dir: &Path) -> Result<Self, ServiceError> {
        let mut registry = Registry::default();
        let entries = std::fs::read_dir(dir).map_err(|e| ServiceError::Config(format!("data dir {}: {e}", dir.display())))?;
        for entry in entries {
            let entry = entry.map_err(|e| ServiceError::Config(e.to_string()))?;
            let path = entry.path();
            let manifest_path = path.join("manifest.json");
            if !path.is_dir() || !manifest_path.is_file() {
                continue;
            }
            let manifest = load_manifest(&manifest_path)?;
            let name = entry.file_name().to_string_lossy().into_owned();
            registry.insert(name, path, manifest);
        }
        Ok(registry)
    }

    pub fn insert(&mut self, name: impl Into<String>, root: PathBuf, manifest: DatasetManifest) {
        self.datasets.insert(name.into(), Entry { root, manifest });
    }

    pub fn len(&self) -> usize {
        self.datasets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }

    pub fn get(&self, name: &str) -> Result<(&Path, &DatasetManifest), ServiceError> {
        self.datasets
            .get(name)
            .map(|e| (e.root.as_path(), &e.manifest))
            .ok_or_else(|| ServiceError::UnknownDataset(name.to_string()))
    }

    pub fn summaries(&self) -> Vec<DatasetSummary> {
        self.datasets
            .iter()
            .map(|(name, e)| {
                let m = &e.manifest;
                DatasetSummary {
                    name: name.clone(),
                    title: m.name.clone(),
                    channel_count: m.channel_count,
                    gesture_count: m.gestures.len(),
                    sampling_rate_hz: m.sampling_rate_hz,
                    electrode_diameter_mm: m.electrode_diameter_mm,
                    users: m.users.clone(),
                    sessions_per_user: m.sessions_per_user,
                    gestures: m.gestures.clone(),
                }
            })
            .collect()
    }
}
