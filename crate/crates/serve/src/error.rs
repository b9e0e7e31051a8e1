use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("text contains no sentences")]
    EmptyText,
    #[error("the model carries no threshold table")]
    NoThresholds,
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("sentence {idx} is out of range (document has {len})")]
    OutOfRange { idx: usize, len: usize },
    #[error("{0}")]
    InvalidDecision(String),
    #[error("no document `{0}`")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Core(#[from] upvtag::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Error body: `{code, message}`.
#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
}

impl ServeError {
    pub fn code(&self) -> &'static str {
        match self {
            ServeError::EmptyText => "empty_text",
            ServeError::NoThresholds => "no_thresholds",
            ServeError::UnknownLabel(_) => "unknown_label",
            ServeError::OutOfRange { .. } => "out_of_range",
            ServeError::InvalidDecision(_) => "invalid_decision",
            ServeError::NotFound(_) => "not_found",
            ServeError::BadRequest(_) => "bad_request",
            ServeError::Core(_) | ServeError::Io(_) | ServeError::Json(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServeError::NotFound(_) => StatusCode::NOT_FOUND,
            ServeError::UnknownLabel(_) | ServeError::OutOfRange { .. } | ServeError::InvalidDecision(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ServeError::EmptyText | ServeError::BadRequest(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServeError {
    fn into_response(self) -> Response {
        if self.status().is_server_error() {
            log::error!("{self}");
        }
        let body = ErrorBody {
            code: self.code(),
            message: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}
