use axum::extract::rejection::JsonRejection;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use awaire::alpha::TsmError;
use awaire::audit::AuditError;
use awaire::store::StoreError;

/// An error response: an HTTP status plus a stable, machine-readable code.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn invalid(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    pub fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "session_not_found", format!("no session {id}"))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        match r {
            JsonRejection::JsonDataError(e) => ApiError::invalid("invalid_request", e.body_text()),
            other => ApiError::new(StatusCode::BAD_REQUEST, "malformed_json", other.body_text()),
        }
    }
}

impl From<AuditError> for ApiError {
    fn from(e: AuditError) -> Self {
        let message = e.to_string();
        let code = match e {
            AuditError::BadAlpha(_) => "bad_alpha",
            AuditError::TooFewCandidates(_) => "too_few_candidates",
            AuditError::UnknownWinner(_) => "unknown_winner",
            AuditError::NoCards => "no_cards",
            AuditError::MissingCvrs => "missing_cvrs",
            AuditError::MissingMargin => "missing_margin",
            AuditError::BadCap => "bad_frontier_cap",
            AuditError::Finished(_) => return ApiError::new(StatusCode::CONFLICT, "session_finished", message),
            AuditError::Ranking(_) => "invalid_ranking",
            AuditError::Store(StoreError::Tsm(TsmError::BadEta0(_))) => "bad_eta0",
            AuditError::Store(StoreError::Tsm(TsmError::BadShrinkage(_))) => "bad_shrinkage",
            AuditError::Store(_) => return ApiError::internal(message),
        };
        ApiError::invalid(code, message)
    }
}
