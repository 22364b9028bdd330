use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use faf_core::LifecycleError;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::store::StoreError;

/// Error body: `{code, message, ...details}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    #[serde(flatten)]
    pub details: Map<String, Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, code: code.to_string(), message: message.into(), details: Map::new() }
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.details.insert(key.to_string(), serde_json::to_value(value).expect("serializable detail"));
        self
    }

    pub fn not_found(code: &str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, code, message)
    }
}

/// HTTP status for each lifecycle error code.
pub fn lifecycle_status(code: &str) -> StatusCode {
    match code {
        "unknown_framework" => StatusCode::NOT_FOUND,
        "session_closed" | "session_already_closed" | "deadline_passed" | "framework_already_open"
        | "framework_resolved" | "framework_unstable" | "pending_votes" | "duplicate_argument" => StatusCode::CONFLICT,
        "invalid_event" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl From<LifecycleError> for ApiError {
    fn from(e: LifecycleError) -> Self {
        let code = e.code();
        let err = ApiError::new(lifecycle_status(code), code, e.to_string());
        match e {
            LifecycleError::PendingVotes { agent, arguments } => err.with("agent", agent).with("arguments", arguments),
            LifecycleError::Cycle(path) => err.with("cycle", path),
            LifecycleError::EdgeTyping(edge) => err.with("edge", edge),
            LifecycleError::OffGrid { value, grid } => err.with("value", value).with("grid", grid),
            _ => err,
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match &e {
            StoreError::UnknownSession(_) => ApiError::not_found("unknown_session", e.to_string()),
            StoreError::StaleSequence { expected, actual } => {
                ApiError::new(StatusCode::CONFLICT, "stale_sequence", e.to_string())
                    .with("expected", expected)
                    .with("actual", actual)
            }
            StoreError::InvalidId(_) => ApiError::new(StatusCode::BAD_REQUEST, "invalid_id", e.to_string()),
            _ => {
                tracing::error!(error = %e, "storage failure");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_error", e.to_string())
            }
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(e.status(), "invalid_body", e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_query", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}
