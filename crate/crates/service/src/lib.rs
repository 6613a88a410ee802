//! Network front end for the layout optimizer.
//!
//! | route | purpose |
//! |---|---|
//! | `GET /datasets` | summaries of registered datasets |
//! | `GET /datasets/{name}/map.svg` | electrode map, one `circle#e<ID>` per electrode |
//! | `POST /stencil` | `{dataset, layout, measurements}` to an SVG stencil |
//! | `GET /models/{id}` | trained model JSON produced by a sweep |
//! | `GET /ws` | WebSocket sweeps, see [`protocol`] |

pub mod config;
mod http;
pub mod protocol;
pub mod registry;
pub mod store;
mod ws;

use std::sync::Arc;

use axum::routing::{get, post};
use axum::Router;
use tokio::sync::Semaphore;

pub use config::Config;
pub use protocol::{ClientMessage, ErrorBody, ServerMessage, SweepRequest};
pub use registry::{DatasetSummary, Registry};
pub use store::ModelStore;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
    #[error("model {0} not found")]
    ModelNotFound(String),
    #[error("model {0} has expired")]
    ModelExpired(String),
    #[error(transparent)]
    Engine(#[from] sparseemg::Error),
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        use sparseemg::Error as E;
        match self {
            ServiceError::Config(_) => "config",
            ServiceError::UnknownDataset(_) => "unknown_dataset",
            ServiceError::ModelNotFound(_) => "not_found",
            ServiceError::ModelExpired(_) => "expired",
            ServiceError::Internal(_) => "internal",
            ServiceError::Engine(e) => match e {
                E::Invalid { .. } => "invalid",
                E::UnknownElectrode(_) => "unknown_electrode",
                E::UnknownGesture(_) => "unknown_gesture",
                E::UnknownUser(_) => "unknown_user",
                E::MissingFile(_) => "missing_file",
                E::Cancelled => "cancelled",
                E::ClassTooSmall { .. } | E::SingleClass => "insufficient_data",
                E::Io { .. } | E::Parse { .. } | E::ColumnMismatch { .. } | E::NonFinite(_) => "dataset_error",
                E::Model(_) => "internal",
            },
        }
    }

    pub fn body(&self) -> ErrorBody {
        let field = match self {
            ServiceError::Engine(e) => e.field().map(str::to_string),
            ServiceError::UnknownDataset(_) => Some("dataset".to_string()),
            _ => None,
        };
        ErrorBody {
            code: self.code().to_string(),
            message: self.to_string(),
            field,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub registry: Arc<Registry>,
    pub models: ModelStore,
    /// One permit per concurrently running sweep.
    pub jobs: Arc<Semaphore>,
    pub threads_per_job: usize,
}

impl AppState {
    pub fn new(config: &Config, registry: Registry) -> Result<Self, ServiceError> {
        let models = ModelStore::new(config.model_dir(), config.model_ttl)?;
        Ok(Self {
            registry: Arc::new(registry),
            models,
            jobs: Arc::new(Semaphore::new(config.workers.max(1))),
            threads_per_job: config.job_threads(),
        })
    }

    pub fn from_config(config: &Config) -> Result<Self, ServiceError> {
        Self::new(config, Registry::scan(&config.data_dir)?)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/datasets", get(http::list_datasets))
        .route("/datasets/{name}/map.svg", get(http::electrode_map))
        .route("/stencil", post(http::stencil))
        .route("/models/{id}", get(http::download_model))
        .route("/ws", get(ws::upgrade))
        .with_state(state)
}

/// Binds `0.0.0.0:<port>` and serves until Ctrl-C.
pub async fn serve(config: Config) -> Result<(), ServiceError> {
    let state = AppState::from_config(&config)?;
    let purged = state.models.purge_expired();
    tracing::info!(
        datasets = state.registry.len(),
        purged,
        workers = config.workers,
        "starting on port {}",
        config.port
    );
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", config.port))
        .await
        .map_err(|e| ServiceError::Config(format!("bind port {}: {e}", config.port)))?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))
}
