use std::path::PathBuf;
use std::time::{Duration, SystemTime};

use sha2::{Digest, Sha256};
use sparseemg::classifiers::TrainedModel;

use crate::ServiceError;

/// Append-only store of trained models addressed by the SHA-256 of their
/// JSON. Artifacts older than the TTL are treated as expired and removed on
/// access.
#[derive(Debug, Clone)]
pub struct ModelStore {
    dir: PathBuf,
    ttl: Duration,
}

impl ModelStore {
    pub fn new(dir: PathBuf, ttl: Duration) -> Result<Self, ServiceError> {
        std::fs::create_dir_all(&dir).map_err(|e| ServiceError::Internal(format!("model dir {}: {e}", dir.display())))?;
        Ok(Self { dir, ttl })
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    /// Writes the model and returns its id. Storing identical content again
    /// refreshes its age.
    pub fn put(&self, model: &TrainedModel) -> Result<String, ServiceError> {
        let json = model.to_json();
        let id = hex::encode(Sha256::digest(json.as_bytes()));
        let tmp = self.dir.join(format!(".{id}.{}.tmp", std::process::id()));
        std::fs::write(&tmp, &json)
            .and_then(|_| std::fs::rename(&tmp, self.path(&id)))
            .map_err(|e| ServiceError::Internal(format!("writing model {id}: {e}")))?;
        Ok(id)
    }

    /// Model JSON for `id`.
    pub fn get(&self, id: &str) -> Result<String, ServiceError> {
        if id.len() != 64 || !id.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()) {
            return Err(ServiceError::ModelNotFound(id.to_string()));
        }
        let path = self.path(id);
        let modified = match std::fs::metadata(&path).and_then(|m| m.modified()) {
            Ok(t) => t,
            Err(_) => return Err(ServiceError::ModelNotFound(id.to_string())),
        };
        if self.is_expired(modified) {
            let _ = std::fs::remove_file(&path);
            return Err(ServiceError::ModelExpired(id.to_string()));
        }
        std::fs::read_to_string(&path).map_err(|_| ServiceError::ModelNotFound(id.to_string()))
    }

    fn is_expired(&self, modified: SystemTime) -> bool {
        SystemTime::now().duration_since(modified).unwrap_or_default() > self.ttl
    }

    /// Deletes expired artifacts; returns how many were removed.
    pub fn purge_expired(&self) -> usize {
        let Ok(entries) = std::fs::read_dir(&self.dir) else {
            return 0;
        };
        let mut removed = 0;
        for entry in entries.flatten() {
            let path = entry.path();
            if path.extension().is_some_and(|e| e == "json")
                && entry.metadata().and_then(|m| m.modified()).is_ok_and(|t| self.is_expired(t))
                && std::fs::remove_file(&path).is_ok()
            {
                removed += 1;
            }
        }
        removed
    }
}
