use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;
use tower_http::services::ServeDir;

use crate::{diagnose, AppState, CheckpointIds, DiagnoseError, FieldError, Submission};

pub const MAX_BODY_BYTES: usize = 64 * 1024;

#[derive(Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    fields: Vec<FieldError>,
}

fn error(status: StatusCode, error: &'static str, message: String, fields: Vec<FieldError>) -> Response {
    (status, Json(ErrorBody { error, message, fields })).into_response()
}

pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/diagnose", post(diagnose_handler))
        .route("/api/pathologies", get(pathologies))
        .route("/health", get(health))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

async fn diagnose_handler(State(state): State<Arc<AppState>>, body: Result<Bytes, BytesRejection>) -> Response {
    let body = match body {
        Ok(b) => b,
        Err(e) if e.status() == StatusCode::PAYLOAD_TOO_LARGE => {
            return error(
                StatusCode::PAYLOAD_TOO_LARGE,
                "payload_too_large",
                format!("request body exceeds {MAX_BODY_BYTES} bytes"),
                vec![],
            )
        }
        Err(e) => return error(e.status(), "bad_request", e.body_text(), vec![]),
    };
    if state.pathology.is_none() || state.ddx.is_none() {
        return unavailable(&state);
    }
    let submission: Submission = match serde_json::from_slice(&body) {
        Ok(s) => s,
        Err(e) => return error(StatusCode::BAD_REQUEST, "invalid_json", e.to_string(), vec![]),
    };
    let result = tokio::task::spawn_blocking(move || diagnose(&state, &submission)).await;
    match result {
        Ok(Ok(r)) => Json(r).into_response(),
        Ok(Err(DiagnoseError::Validation(fields))) => {
            error(StatusCode::BAD_REQUEST, "validation", "invalid answers".into(), fields)
        }
        Ok(Err(e @ DiagnoseError::Unavailable(_))) => {
            error(StatusCode::SERVICE_UNAVAILABLE, "model_unavailable", e.to_string(), vec![])
        }
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), vec![]),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), vec![]),
    }
}

fn unavailable(state: &AppState) -> Response {
    error(StatusCode::SERVICE_UNAVAILABLE, "model_unavailable", format!("missing {}", state.missing.join(", ")), vec![])
}

async fn pathologies(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let list: Vec<_> = state.catalog.pathologies.iter().map(|p| json!({ "id": p.id, "label": p.name })).collect();
    Json(json!(list))
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    let ok = state.pathology.is_some() && state.ddx.is_some();
    let body = json!({
        "status": if ok { "ok" } else { "unavailable" },
        "checkpoints": CheckpointIds {
            pathology: state.pathology.as_ref().map(|m| m.id.clone()),
            ddx: state.ddx.as_ref().map(|m| m.id.clone()),
        },
        "missing": state.missing,
        "uptime_seconds": state.uptime_seconds(),
    });
    let status = if ok { StatusCode::OK } else { StatusCode::SERVICE_UNAVAILABLE };
    (status, Json(body)).into_response()
}
