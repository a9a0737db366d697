use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use seqcompare::Error as CoreError;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("no decision rule is loaded")]
    NoRule,

    #[error("unknown session {0}")]
    UnknownSession(String),

    #[error("{0}")]
    Conflict(String),

    #[error("{0}")]
    Unprocessable(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NoRule => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) | ApiError::Core(CoreError::Terminated(_)) => StatusCode::CONFLICT,
            ApiError::Unprocessable(_) | ApiError::Core(CoreError::InvalidOutcome(_)) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ApiError::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}
