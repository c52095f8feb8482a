use std::path::Path;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use varfield::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("not found: {0}")]
    NotFound(String),

    #[error("bad request: {0}")]
    BadRequest(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;

impl ServiceError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        ServiceError::Io { path: path.display().to_string(), source }
    }

    pub fn bad(msg: impl Into<String>) -> Self {
        ServiceError::BadRequest(msg.into())
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::BadRequest(_) | ServiceError::Json(_) => StatusCode::BAD_REQUEST,
            ServiceError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            ServiceError::Core(e) => match e {
                CoreError::Alignment(_) => StatusCode::CONFLICT,
                CoreError::UnknownInstruction { .. } | CoreError::AmbiguousInstruction { .. } => {
                    StatusCode::UNPROCESSABLE_ENTITY
                }
                CoreError::Io { .. } | CoreError::State(_) | CoreError::Training(_) => {
                    StatusCode::INTERNAL_SERVER_ERROR
                }
                _ => StatusCode::BAD_REQUEST,
            },
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}
