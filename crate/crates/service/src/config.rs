use std::path::PathBuf;
use std::time::Duration;

use crate::ServiceError;

pub const ENV_PORT: &str = "SPARSEEMG_PORT";
pub const ENV_DATA_DIR: &str = "SPARSEEMG_DATA_DIR";
pub const ENV_WORKERS: &str = "SPARSEEMG_WORKERS";
pub const ENV_MODEL_TTL_HOURS: &str = "SPARSEEMG_MODEL_TTL_HOURS";

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_WORKERS: usize = 2;
pub const DEFAULT_MODEL_TTL_HOURS: f64 = 24.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub port: u16,
    /// Each subdirectory holding a `manifest.json` is served as a dataset
    /// named after the directory.
    pub data_dir: PathBuf,
    /// Sweeps allowed to run at once across all connections.
    pub workers: usize,
    /// Threads given to each running sweep; `None` splits the machine's
    /// cores evenly between `workers`.
    pub threads_per_job: Option<usize>,
    pub model_ttl: Duration,
    /// Model artifacts; defaults to `<data_dir>/.models`.
    pub model_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            port: DEFAULT_PORT,
            data_dir: PathBuf::from("data"),
            workers: DEFAULT_WORKERS,
            threads_per_job: None,
            model_ttl: Duration::from_secs_f64(DEFAULT_MODEL_TTL_HOURS * 3600.0),
            model_dir: None,
        }
    }
}

impl Config {
    pub fn from_env() -> Result<Self, ServiceError> {
        Self::from_lookup(|key| std::env::var(key).ok())
    }

    /// Reads settings through `lookup`, falling back to defaults for unset keys.
    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, ServiceError> {
        let mut cfg = Config::default();
        if let Some(v) = lookup(ENV_PORT) {
            cfg.port = v.trim().parse().map_err(|_| bad_env(ENV_PORT, "expected a port number"))?;
        }
        if let Some(v) = lookup(ENV_DATA_DIR) {
            cfg.data_dir = PathBuf::from(v);
        }
        if let Some(v) = lookup(ENV_WORKERS) {
            cfg.workers = v
                .trim()
                .parse()
                .ok()
                .filter(|&w| w > 0)
                .ok_or_else(|| bad_env(ENV_WORKERS, "expected a positive integer"))?;
        }
        if let Some(v) = lookup(ENV_MODEL_TTL_HOURS) {
            let hours: f64 = v
                .trim()
                .parse()
                .ok()
                .filter(|h: &f64| h.is_finite() && *h > 0.0)
                .ok_or_else(|| bad_env(ENV_MODEL_TTL_HOURS, "expected a positive number of hours"))?;
            cfg.model_ttl = Duration::from_secs_f64(hours * 3600.0);
        }
        Ok(cfg)
    }

    pub fn model_dir(&self) -> PathBuf {
        self.model_dir.clone().unwrap_or_else(|| self.data_dir.join(".models"))
    }

    pub(crate) fn job_threads(&self) -> usize {
        self.threads_per_job.unwrap_or_else(|| {
            let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
            (cores / self.workers.max(1)).max(1)
        })
    }
}

fn bad_env(var: &str, reason: &str) -> ServiceError {
    ServiceError::Config(format!("{var}: {reason}"))
}
