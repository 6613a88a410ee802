use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Deserialize;
use sparseemg::stencil::{electrode_map_svg, generate_stencil, ArmMeasurements};
use sparseemg::ElectrodeId;

use crate::protocol::{Envelope, ServerMessage};
use crate::{AppState, DatasetSummary, ServiceError};

const SVG: &str = "image/svg+xml";

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::UnknownDataset(_) | ServiceError::ModelNotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::ModelExpired(_) => StatusCode::GONE,
            ServiceError::Engine(sparseemg::Error::Io { .. }) | ServiceError::Internal(_) | ServiceError::Config(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            ServiceError::Engine(_) => StatusCode::BAD_REQUEST,
        };
        (status, Json(Envelope::new(ServerMessage::Error(self.body())))).into_response()
    }
}

pub(crate) async fn list_datasets(State(state): State<AppState>) -> Json<Vec<DatasetSummary>> {
    Json(state.registry.summaries())
}

pub(crate) async fn electrode_map(State(state): State<AppState>, Path(name): Path<String>) -> Result<Response, ServiceError> {
    let (_, manifest) = state.registry.get(&name)?;
    Ok(([(header::CONTENT_TYPE, SVG)], electrode_map_svg(manifest)).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct StencilRequest {
    dataset: String,
    layout: Vec<ElectrodeId>,
    measurements: ArmMeasurements,
}

pub(crate) async fn stencil(State(state): State<AppState>, Json(req): Json<StencilRequest>) -> Result<Response, ServiceError> {
    let (_, manifest) = state.registry.get(&req.dataset)?;
    let svg = generate_stencil(&req.layout, manifest, &req.measurements)?;
    Ok((
        [
            (header::CONTENT_TYPE, SVG),
            (header::CONTENT_DISPOSITION, "attachment; filename=\"stencil.svg\""),
        ],
        svg,
    )
        .into_response())
}

pub(crate) async fn download_model(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let store = state.models.clone();
    let lookup = id.clone();
    let json = tokio::task::spawn_blocking(move || store.get(&lookup))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    let disposition = format!("attachment; filename=\"model-{id}.json\"");
    Ok((
        [
            (header::CONTENT_TYPE, "application/json".to_string()),
            (header::CONTENT_DISPOSITION, disposition),
        ],
        json,
    )
        .into_response())
}
